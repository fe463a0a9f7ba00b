#ifndef STOCHENS_TOY_DATA_HPP
#define STOCHENS_TOY_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "stochens/rng.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

inline constexpr Box kDomainIn{-1.0, 1.0};
inline constexpr Box kDomainOut{-10.0, 10.0};

/// Two interleaving arcs with isotropic Gaussian jitter of standard deviation
/// `mixing`, clamped to [-1, 1]^2.
struct ToySpec {
  char variant = 'a';
  int n_per_class = 100;
  double mixing = 0.05;
  std::uint64_t seed = 0;

  void validate() const;

  /// Preset jitter for variants a, b, c: 0.05, 0.15, 0.30.
  static ToySpec preset(char variant, int n_per_class = 100, std::uint64_t seed = 0);
  static double preset_mixing(char variant);
};

/// Class-0 points first, then class-1. `stream_tag` separates train and test
/// draws from the same spec.
Dataset generate_toy(const ToySpec& spec, std::uint64_t stream_tag = stream::kTrainData);

/// Euclidean distance from `x` to the noise-free arc of class `label`.
double distance_to_arc(const Vector& x, int label);

/// Fraction of coordinates clamped while generating (diagnostic).
double toy_clamp_fraction(const ToySpec& spec, std::uint64_t stream_tag = stream::kTrainData);

struct EvalGrid {
  Box domain;
  int resolution = 2;
  Matrix points;  // resolution^2 x 2; point i*r + j = (t_i, t_j)
};

EvalGrid eval_grid(const Box& domain, int resolution);

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_csv(const std::filesystem::path& path);
void save_points_csv(const std::filesystem::path& path, const Matrix& points);
Matrix load_points_csv(const std::filesystem::path& path);

}  // namespace stochens

#endif  // STOCHENS_TOY_DATA_HPP
