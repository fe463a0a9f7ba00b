#include "stochens/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stochens/errors.hpp"
#include "stochens/store.hpp"

namespace stochens {

namespace {

// Raw arcs live in [-1, 2] x [-0.5, 1]; they are centered and halved so the
// noise-free layout spans [-0.75, 0.75] x [-0.375, 0.375].
constexpr double kScale = 0.5;
constexpr double kCenterX = 0.5;
constexpr double kCenterY = 0.25;

Vector arc_point(int label, double t) {
  Vector p(2);
  if (label == 0) {
    p << std::cos(t), std::sin(t);
  } else {
    p << 1.0 - std::cos(t), 0.5 - std::sin(t);
  }
  p[0] = (p[0] - kCenterX) * kScale;
  p[1] = (p[1] - kCenterY) * kScale;
  return p;
}

struct Generated {
  Dataset data;
  std::size_t clamped = 0;
};

Generated generate(const ToySpec& spec, std::uint64_t stream_tag) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {stream_tag, static_cast<std::uint64_t>(spec.variant)});
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, 1.0);
  Generated g;
  const auto n = static_cast<Eigen::Index>(2 * spec.n_per_class);
  g.data.points.resize(n, 2);
  g.data.labels.reserve(static_cast<std::size_t>(n));
  g.data.domain = kDomainIn;
  Eigen::Index row = 0;
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < spec.n_per_class; ++i, ++row) {
      const Vector p = arc_point(label, angle(rng));
      for (int k = 0; k < 2; ++k) {
        const double v = p[k] + spec.mixing * jitter(rng);
        const double c = std::clamp(v, kDomainIn.lo, kDomainIn.hi);
        g.clamped += c != v;
        g.data.points(row, k) = c;
      }
      g.data.labels.push_back(label);
    }
  }
  return g;
}

}  // namespace

void ToySpec::validate() const {
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  if (!(mixing >= 0.0) || !std::isfinite(mixing)) throw ConfigError("mixing must be a finite value >= 0");
}

double ToySpec::preset_mixing(char variant) {
  switch (variant) {
    case 'a': return 0.05;
    case 'b': return 0.15;
    case 'c': return 0.30;
    default: throw ConfigError(std::string("unknown toy variant '") + variant + "' (expected a, b or c)");
  }
}

ToySpec ToySpec::preset(char variant, int n_per_class, std::uint64_t seed) {
  return ToySpec{variant, n_per_class, preset_mixing(variant), seed};
}

Dataset generate_toy(const ToySpec& spec, std::uint64_t stream_tag) {
  return generate(spec, stream_tag).data;
}

double toy_clamp_fraction(const ToySpec& spec, std::uint64_t stream_tag) {
  const Generated g = generate(spec, stream_tag);
  return static_cast<double>(g.clamped) / static_cast<double>(g.data.points.size());
}

double distance_to_arc(const Vector& x, int label) {
  if (x.size() != 2) throw ShapeError("distance_to_arc expects a 2D point");
  if (label != 0 && label != 1) throw DomainError("label must be 0 or 1");
  // Undo the affine map, measure against the unit half-circle, scale back.
  double u = x[0] / kScale + kCenterX;
  double v = x[1] / kScale + kCenterY;
  if (label == 1) {
    u = 1.0 - u;
    v = 0.5 - v;
  }
  double d = 0.0;
  if (v >= 0.0) {
    d = std::abs(std::hypot(u, v) - 1.0);
  } else {
    d = std::min(std::hypot(u - 1.0, v), std::hypot(u + 1.0, v));
  }
  return d * kScale;
}

EvalGrid eval_grid(const Box& domain, int resolution) {
  if (resolution < 2) throw ConfigError("grid resolution must be >= 2");
  if (!(domain.lo < domain.hi)) throw DomainError("grid domain must satisfy lo < hi");
  EvalGrid g{domain, resolution, Matrix(resolution * resolution, 2)};
  const double step = (domain.hi - domain.lo) / (resolution - 1);
  const auto coord = [&](int i) { return i == resolution - 1 ? domain.hi : domain.lo + i * step; };
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      g.points(i * resolution + j, 0) = coord(i);
      g.points(i * resolution + j, 1) = coord(j);
    }
  }
  return g;
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  if (data.points.cols() != 2) throw ShapeError("dataset CSV expects 2D points");
  std::string out = "x0,x1,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out += format_double(data.points(r, 0)) + "," + format_double(data.points(r, 1)) + "," +
           std::to_string(data.labels[i]) + "\n";
  }
  write_text(path, out);
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  const CsvTable t = read_numeric_csv(path, "x0,x1,label");
  Dataset d;
  d.points = t.values.leftCols(2);
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    const double y = t.values(i, 2);
    if (y != 0.0 && y != 1.0) {
      throw ParseError(path.string() + ":" + std::to_string(t.lines[static_cast<std::size_t>(i)]) +
                       ": label must be 0 or 1");
    }
    d.labels.push_back(static_cast<int>(y));
  }
  if (!d.points.allFinite()) throw ParseError(path.string() + ": non-finite coordinate");
  d.validate();
  return d;
}

void save_points_csv(const std::filesystem::path& path, const Matrix& points) {
  if (points.cols() != 2) throw ShapeError("point CSV expects 2D points");
  std::string out = "x0,x1\n";
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out += format_double(points(i, 0)) + "," + format_double(points(i, 1)) + "\n";
  }
  write_text(path, out);
}

Matrix load_points_csv(const std::filesystem::path& path) {
  const CsvTable t = read_numeric_csv(path, "x0,x1");
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    if (!t.values.row(i).allFinite()) {
      throw ParseError(path.string() + ":" + std::to_string(t.lines[static_cast<std::size_t>(i)]) +
                       ": non-finite coordinate");
    }
  }
  return t.values;
}

}  // namespace stochens
