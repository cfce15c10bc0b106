#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace streambin::binpack {

/// Slack applied to every fit test. Item sizes are noisy CPU averages, so an
/// exact fill corrupted by rounding must still count as fitting.
inline constexpr double kFitTolerance = 1e-9;

/// Largest instance the exhaustive oracle accepts by default.
inline constexpr std::size_t kDefaultOracleLimit = 12;

struct PackItem {
  std::string id;
  double size = 0.0;  // CPU fraction in (0, 1]
};

struct Bin {
  std::size_t index = 0;
  double capacity = 1.0;
  double residual = 1.0;
  std::vector<std::string> items;
  bool closed = false;  // closed bins keep their index but never receive items

  bool empty() const { return items.empty(); }
  bool fits(double size) const { return !closed && residual + kFitTolerance >= size; }
};

enum class FitCriterion { FirstFit };

struct Placement {
  std::string item_id;
  std::size_t bin = 0;
  bool opened_bin = false;
};

struct PackingPlan {
  std::vector<Placement> placements;  // input order
  std::size_t bins_used = 0;
  std::vector<std::size_t> opened_bins;
  std::vector<Bin> bins;  // final state of the bin list

  const Placement* find(const std::string& item_id) const;
};

class InvalidItem : public std::invalid_argument {
 public:
  InvalidItem(std::string item_id, double size);
  const std::string& item_id() const { return item_id_; }
  double size() const { return size_; }

 private:
  std::string item_id_;
  double size_;
};

class InstanceTooLarge : public std::length_error {
 public:
  InstanceTooLarge(std::size_t n, std::size_t limit);
};

/// Throws InvalidItem unless 0 < size <= 1.
void validate(const PackItem& item);

/// Creates `count` empty unit bins indexed 0..count-1.
std::vector<Bin> make_bins(std::size_t count);

/// Places `item` in the lowest-index open bin that fits, appending a new bin
/// when none does. Returns the chosen bin's position in `bins`.
std::size_t first_fit_place(const PackItem& item, std::vector<Bin>& bins);

/// Online packing of `items` in input order on top of the existing `bins`.
PackingPlan pack_sequence(std::span<const PackItem> items, std::vector<Bin> bins,
                          FitCriterion criterion = FitCriterion::FirstFit);

/// Exact minimum number of unit bins for `sizes` (branch and bound).
std::size_t optimal_bins(std::span<const double> sizes,
                         std::size_t limit = kDefaultOracleLimit);
std::size_t optimal_bins(std::span<const PackItem> items,
                         std::size_t limit = kDefaultOracleLimit);

}  // namespace streambin::binpack
