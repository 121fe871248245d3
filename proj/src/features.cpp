#include "rar/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <mutex>

namespace rar {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr int W = Observation::kWidth;
constexpr int H = Observation::kHeight;

void box_average(const std::vector<double>& img, int grid, std::vector<double>& out) {
  const int cell = W / grid;
  const double inv = 1.0 / (cell * cell);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      double s = 0.0;
      for (int y = gy * cell; y < (gy + 1) * cell; ++y) {
        const double* row = &img[static_cast<std::size_t>(y) * W + gx * cell];
        for (int x = 0; x < cell; ++x) s += row[x];
      }
      out.push_back(s * inv);
    }
  }
}

// The projection matrix is 64 MiB, so it is built once on first use.
const std::vector<float>& projection_matrix() {
  static std::once_flag once;
  static std::vector<float> m;
  std::call_once(once, [] {
    constexpr std::size_t n_in = Observation::kPixels * 4;
    m.resize(n_in * RandomProjectionExtractor::kDim);
    Rng rng(RandomProjectionExtractor::kSeed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(RandomProjectionExtractor::kDim));
    for (float& v : m) v = static_cast<float>(rng.normal() * scale);
  });
  return m;
}

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated embedding file reading " + what);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& what) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > (1u << 20)) throw Error("implausible string length in embedding file at " + what);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw Error("truncated embedding file reading " + what);
  return s;
}

constexpr char kMagic[7] = {'R', 'A', 'R', 'E', 'M', 'B', '1'};

}  // namespace

Embedding FeatureExtractor::extract(const Observation& o) const {
  std::vector<double> v = describe(o);
  // A view with nothing in it (camera at or below the table) maps to the
  // uniform direction instead of an undefined one.
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) std::fill(v.begin(), v.end(), 1.0);
  return normalized_embedding(id(), v);
}

std::vector<double> grey_channel(const Observation& o) {
  o.check();
  std::vector<double> g(Observation::kPixels);
  for (std::size_t i = 0; i < Observation::kPixels; ++i) {
    g[i] = (0.299 * o.rgb[3 * i] + 0.587 * o.rgb[3 * i + 1] + 0.114 * o.rgb[3 * i + 2]) / 255.0;
  }
  return g;
}

std::vector<double> scaled_depth(const Observation& o) {
  o.check();
  const auto [lo, hi] = std::minmax_element(o.depth.begin(), o.depth.end());
  const double span = static_cast<double>(*hi) - *lo;
  std::vector<double> d(Observation::kPixels, 0.0);
  if (span <= 0.0) return d;
  for (std::size_t i = 0; i < Observation::kPixels; ++i) d[i] = (o.depth[i] - static_cast<double>(*lo)) / span;
  return d;
}

std::vector<double> PatchExtractor::describe(const Observation& o) const {
  std::vector<double> out;
  out.reserve(dim());
  box_average(grey_channel(o), kGrid, out);
  box_average(scaled_depth(o), kGrid, out);
  return out;
}

std::vector<double> RandomProjectionExtractor::describe(const Observation& o) const {
  o.check();
  const std::vector<double> depth = scaled_depth(o);
  std::vector<float> x(Observation::kPixels * 4);
  for (std::size_t i = 0; i < Observation::kPixels; ++i) {
    x[4 * i + 0] = o.rgb[3 * i + 0] / 255.0f;
    x[4 * i + 1] = o.rgb[3 * i + 1] / 255.0f;
    x[4 * i + 2] = o.rgb[3 * i + 2] / 255.0f;
    x[4 * i + 3] = static_cast<float>(depth[i]);
  }
  const std::vector<float>& m = projection_matrix();
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> P(
      m.data(), static_cast<Eigen::Index>(kDim), static_cast<Eigen::Index>(x.size()));
  const Eigen::Map<const Eigen::VectorXf> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXf y = P * xv;
  return {y.data(), y.data() + y.size()};
}

std::vector<double> GradientHistogramExtractor::describe(const Observation& o) const {
  const std::vector<double> g = grey_channel(o);
  std::vector<double> hist(dim(), 0.0);
  const int cell = W / kGrid;
  for (int y = 1; y < H - 1; ++y) {
    for (int x = 1; x < W - 1; ++x) {
      const double gx = g[y * W + x + 1] - g[y * W + x - 1];
      const double gy = g[(y + 1) * W + x] - g[(y - 1) * W + x];
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double a = std::atan2(gy, gx);
      if (a < 0.0) a += 2.0 * kPi;
      const int bin = std::min(kBins - 1, static_cast<int>(a / (2.0 * kPi) * kBins));
      const int c = (y / cell) * kGrid + (x / cell);
      hist[static_cast<std::size_t>(c) * kBins + bin] += mag;
    }
  }
  return hist;
}

std::vector<std::string> builtin_extractors() { return {"patch", "random_projection", "gradient_histogram"}; }

std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& id) {
  if (id == "patch") return std::make_shared<PatchExtractor>();
  if (id == "random_projection") return std::make_shared<RandomProjectionExtractor>();
  if (id == "gradient_histogram") return std::make_shared<GradientHistogramExtractor>();
  throw Error("unknown feature extractor '" + id + "'");
}

Embedding normalized_embedding(const std::string& extractor_id, const std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw Error("cannot normalise a zero or non-finite descriptor");
  const double inv = 1.0 / std::sqrt(n2);
  Embedding e{extractor_id, {}};
  e.values.reserve(v.size());
  for (double x : v) e.values.push_back(static_cast<float>(x * inv));
  return e;
}

double cosine(const float* a, const float* b, std::size_t n) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("similarity of a zero vector is undefined");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.extractor_id != b.extractor_id) {
    throw Error("similarity across extractors '" + a.extractor_id + "' and '" + b.extractor_id + "'");
  }
  if (a.dim() != b.dim()) throw Error("similarity of embeddings with different dimensions");
  return cosine(a.values.data(), b.values.data(), a.dim());
}

void export_embeddings(const std::filesystem::path& path, const std::string& extractor_id,
                       const EmbeddingTable& table) {
  const std::uint32_t dim = table.empty() ? 0u : static_cast<std::uint32_t>(table.front().second.dim());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write embedding file '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  put_string(out, extractor_id);
  put<std::uint32_t>(out, dim);
  put<std::uint64_t>(out, table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& [key, e] = table[i];
    if (e.dim() != dim) throw Error("record " + std::to_string(i) + " has inconsistent dimension");
    put_string(out, key);
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(dim * sizeof(float)));
  }
  if (!out) throw Error("failed writing embedding file '" + path.string() + "'");
}

EmbeddingTable import_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embedding file '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw Error("'" + path.string() + "' is not a RAREMB1 embedding file");
  }
  std::string name = get_string(in, "header");
  if (name.rfind("external:", 0) == 0) name = name.substr(9);
  const auto dim = get<std::uint32_t>(in, "header");
  const auto count = get<std::uint64_t>(in, "header");
  if (dim == 0 && count > 0) throw Error("embedding file declares dimension 0");
  EmbeddingTable table;
  std::vector<double> buf(dim);
  std::vector<float> raw(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    std::string key = get_string(in, where);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(dim * sizeof(float)))) {
      throw Error("truncated embedding file at " + where);
    }
    double n2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      buf[k] = raw[k];
      n2 += buf[k] * buf[k];
    }
    // Vectors that are already unit length are kept bit-for-bit.
    if (std::abs(n2 - 1.0) <= 1e-6) {
      table.emplace_back(std::move(key), Embedding{"external:" + name, raw});
      continue;
    }
    try {
      table.emplace_back(std::move(key), normalized_embedding("external:" + name, buf));
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes after " + std::to_string(count) + " records");
  return table;
}

}  // namespace rar
