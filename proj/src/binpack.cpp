#include "streambin/binpack.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace streambin::binpack {

namespace {

std::string describe_invalid(const std::string& id, double size) {
  std::ostringstream os;
  os << "invalid item '" << id << "': size " << size << " outside (0, 1]";
  return os.str();
}

std::string describe_too_large(std::size_t n, std::size_t limit) {
  std::ostringstream os;
  os << "oracle instance of " << n << " items exceeds limit " << limit;
  return os.str();
}

}  // namespace

InvalidItem::InvalidItem(std::string item_id, double size)
    : std::invalid_argument(describe_invalid(item_id, size)),
      item_id_(std::move(item_id)),
      size_(size) {}

InstanceTooLarge::InstanceTooLarge(std::size_t n, std::size_t limit)
    : std::length_error(describe_too_large(n, limit)) {}

const Placement* PackingPlan::find(const std::string& item_id) const {
  for (const auto& p : placements) {
    if (p.item_id == item_id) return &p;
  }
  return nullptr;
}

void validate(const PackItem& item) {
  if (!(item.size > 0.0) || item.size > 1.0 || std::isnan(item.size)) {
    throw InvalidItem(item.id, item.size);
  }
}

std::vector<Bin> make_bins(std::size_t count) {
  std::vector<Bin> bins(count);
  for (std::size_t i = 0; i < count; ++i) bins[i].index = i;
  return bins;
}

std::size_t first_fit_place(const PackItem& item, std::vector<Bin>& bins) {
  validate(item);
  for (std::size_t pos = 0; pos < bins.size(); ++pos) {
    Bin& bin = bins[pos];
    if (bin.fits(item.size)) {
      bin.residual = std::max(0.0, bin.residual - item.size);
      bin.items.push_back(item.id);
      return pos;
    }
  }
  Bin fresh;
  fresh.index = bins.empty() ? 0 : bins.back().index + 1;
  fresh.residual = std::max(0.0, fresh.capacity - item.size);
  fresh.items.push_back(item.id);
  bins.push_back(std::move(fresh));
  return bins.size() - 1;
}

PackingPlan pack_sequence(std::span<const PackItem> items, std::vector<Bin> bins,
                          FitCriterion criterion) {
  // Only First-Fit exists today; the enum keeps the signature stable.
  (void)criterion;
  PackingPlan plan;
  plan.placements.reserve(items.size());
  for (const auto& item : items) {
    const std::size_t before = bins.size();
    const std::size_t pos = first_fit_place(item, bins);
    const bool opened = bins.size() > before;
    if (opened) plan.opened_bins.push_back(bins[pos].index);
    plan.placements.push_back({item.id, bins[pos].index, opened});
  }
  plan.bins_used = static_cast<std::size_t>(
      std::count_if(bins.begin(), bins.end(), [](const Bin& b) { return !b.empty(); }));
  plan.bins = std::move(bins);
  return plan;
}

std::size_t optimal_bins(std::span<const double> sizes, std::size_t limit) {
  if (sizes.size() > limit) throw InstanceTooLarge(sizes.size(), limit);
  for (double s : sizes) validate(PackItem{"", s});
  if (sizes.empty()) return 0;

  std::vector<double> sorted(sizes.begin(), sizes.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();

  // suffix[i] = sum of sorted[i..n)
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + sorted[i];

  std::size_t best = n;
  std::vector<double> load;
  load.reserve(n);

  std::function<void(std::size_t)> search = [&](std::size_t i) {
    if (i == n) {
      best = std::min(best, load.size());
      return;
    }
    // Remaining items need at least this many bins beyond the free space we have.
    double free_space = 0.0;
    for (double l : load) free_space += 1.0 - l;
    const double overflow = suffix[i] - free_space;
    std::size_t lower = load.size();
    if (overflow > kFitTolerance) {
      lower += static_cast<std::size_t>(std::ceil(overflow - kFitTolerance));
    }
    if (lower >= best) return;

    const double size = sorted[i];
    for (std::size_t b = 0; b < load.size(); ++b) {
      if (load[b] + size > 1.0 + kFitTolerance) continue;
      // Bins with identical load are interchangeable.
      bool seen = false;
      for (std::size_t c = 0; c < b; ++c) {
        if (std::abs(load[c] - load[b]) < 1e-12) {
          seen = true;
          break;
        }
      }
      if (seen) continue;
      load[b] += size;
      search(i + 1);
      load[b] -= size;
    }
    if (load.size() + 1 < best) {
      load.push_back(size);
      search(i + 1);
      load.pop_back();
    }
  };
  search(0);
  return best;
}

std::size_t optimal_bins(std::span<const PackItem> items, std::size_t limit) {
  if (items.size() > limit) throw InstanceTooLarge(items.size(), limit);
  std::vector<double> sizes;
  sizes.reserve(items.size());
  for (const auto& item : items) {
    validate(item);
    sizes.push_back(item.size);
  }
  return optimal_bins(std::span<const double>(sizes), limit);
}

}  // namespace streambin::binpack
