#include "causeloc/matrix_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "causeloc/error.hpp"

namespace causeloc {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

const char* to_string(Provenance p) {
  return p == Provenance::Measured ? "Measured" : "Predicted";
}

ResponseMatrix::ResponseMatrix(std::vector<std::string> images,
                               std::vector<std::string> voxels, Provenance prov)
    : image_ids(std::move(images)), voxel_ids(std::move(voxels)), provenance(prov) {
  values.assign(image_ids.size() * voxel_ids.size(), 0.0f);
}

std::vector<double> ResponseMatrix::column(std::size_t voxel) const {
  std::vector<double> out(n_images());
  for (std::size_t i = 0; i < n_images(); ++i) out[i] = at(i, voxel);
  return out;
}

void ResponseMatrix::check() const {
  if (values.size() != image_ids.size() * voxel_ids.size()) {
    fail(ErrorCode::InvalidArgument, "matrix values do not match id dimensions");
  }
  for (float v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "matrix contains NaN or Inf");
  }
}

std::unordered_map<std::string, std::size_t> index_of(const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!out.emplace(ids[i], i).second) {
      fail(ErrorCode::InvalidArgument, "duplicate id '" + ids[i] + "'");
    }
  }
  return out;
}

ResponseMatrix select_voxels(const ResponseMatrix& m, const std::vector<std::size_t>& columns) {
  std::vector<std::string> voxels;
  voxels.reserve(columns.size());
  for (auto c : columns) {
    require(c < m.n_voxels(), "voxel column out of range");
    voxels.push_back(m.voxel_ids[c]);
  }
  ResponseMatrix out(m.image_ids, std::move(voxels), m.provenance);
  for (std::size_t i = 0; i < m.n_images(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out.at(i, j) = m.at(i, columns[j]);
  }
  return out;
}

ResponseMatrix select_voxels(const ResponseMatrix& m, const std::vector<bool>& mask) {
  require(mask.size() == m.n_voxels(), "mask length differs from voxel count");
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) cols.push_back(j);
  }
  return select_voxels(m, cols);
}

ResponseMatrix select_images(const ResponseMatrix& m, const std::vector<std::string>& ids) {
  auto rows = index_of(m.image_ids);
  ResponseMatrix out(ids, m.voxel_ids, m.provenance);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = rows.find(ids[i]);
    if (it == rows.end()) fail(ErrorCode::InvalidArgument, "unknown image id '" + ids[i] + "'");
    auto src = m.row(it->second);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

ResponseMatrix concat_images(const std::vector<const ResponseMatrix*>& parts) {
  require(!parts.empty(), "nothing to concatenate");
  ResponseMatrix out;
  out.voxel_ids = parts.front()->voxel_ids;
  out.provenance = parts.front()->provenance;
  for (const auto* p : parts) {
    require(p->voxel_ids == out.voxel_ids, "concatenated matrices must share voxel ids");
    out.image_ids.insert(out.image_ids.end(), p->image_ids.begin(), p->image_ids.end());
    out.values.insert(out.values.end(), p->values.begin(), p->values.end());
  }
  return out;
}

std::span<const float> EmbeddingIndex::find(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return row(i);
  }
  fail(ErrorCode::InvalidArgument, "embedding index has no entry '" + id + "'");
}

void EmbeddingIndex::check_unit_norm() const {
  if (vectors.size() != ids.size() * dim) {
    fail(ErrorCode::InvalidArgument, "embedding values do not match dimensions");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    double sq = 0.0;
    for (float v : row(i)) {
      if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "embedding contains NaN or Inf");
      sq += static_cast<double>(v) * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      fail(ErrorCode::InvalidArgument, "embedding row '" + ids[i] + "' is not unit norm");
    }
  }
}

void normalize_unit(std::span<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  double norm = std::sqrt(sq);
  require(norm > 0.0, "cannot normalize a zero vector");
  for (float& x : v) x = static_cast<float>(x / norm);
}

NormalizedMatrix zscore_normalize(const ResponseMatrix& m) {
  if (m.n_images() < 2) fail(ErrorCode::InvalidArgument, "insufficient images");
  m.check();
  const std::size_t n = m.n_images();
  NormalizedMatrix out;
  std::vector<std::size_t> kept;
  for (std::size_t v = 0; v < m.n_voxels(); ++v) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += m.at(i, v);
    double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = m.at(i, v) - mean;
      ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd < kDeadVoxelStd) {
      out.stats.dead_voxel_ids.push_back(m.voxel_ids[v]);
      continue;
    }
    kept.push_back(v);
    out.stats.voxel_ids.push_back(m.voxel_ids[v]);
    out.stats.mean.push_back(mean);
    out.stats.stddev.push_back(sd);
  }
  out.matrix = ResponseMatrix(m.image_ids, out.stats.voxel_ids, m.provenance);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < kept.size(); ++j) {
      out.matrix.at(i, j) = static_cast<float>(
          (m.at(i, kept[j]) - out.stats.mean[j]) / out.stats.stddev[j]);
    }
  }
  return out;
}

ResponseMatrix apply_normalization(const ResponseMatrix& m, const NormalizationStats& stats) {
  auto cols = index_of(m.voxel_ids);
  ResponseMatrix out(m.image_ids, stats.voxel_ids, m.provenance);
  for (std::size_t j = 0; j < stats.voxel_ids.size(); ++j) {
    auto it = cols.find(stats.voxel_ids[j]);
    if (it == cols.end()) {
      fail(ErrorCode::InvalidArgument, "voxel '" + stats.voxel_ids[j] + "' missing from matrix");
    }
    for (std::size_t i = 0; i < m.n_images(); ++i) {
      out.at(i, j) = static_cast<float>((m.at(i, it->second) - stats.mean[j]) / stats.stddev[j]);
    }
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson inputs differ in length");
  require(x.size() >= 2, "pearson needs at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::InvalidArgument, "undefined correlation");
  double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::size_t ReliabilityMask::n_kept() const {
  std::size_t n = 0;
  for (bool k : keep) n += k;
  return n;
}

ReliabilityMask filter_voxels_by_reliability(const ResponseMatrix& predicted,
                                             const ResponseMatrix& measured,
                                             double threshold) {
  if (predicted.image_ids != measured.image_ids || predicted.voxel_ids != measured.voxel_ids) {
    fail(ErrorCode::InvalidArgument, "predicted and measured ids differ");
  }
  ReliabilityMask mask;
  mask.threshold = threshold;
  mask.keep.assign(predicted.n_voxels(), false);
  mask.correlation.assign(predicted.n_voxels(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t v = 0; v < predicted.n_voxels(); ++v) {
    auto p = predicted.column(v);
    auto q = measured.column(v);
    try {
      double r = pearson(p, q);
      mask.correlation[v] = r;
      mask.keep[v] = r >= threshold;
    } catch (const Error&) {
      mask.warnings.push_back("voxel " + predicted.voxel_ids[v] +
                              " excluded: undefined correlation");
    }
  }
  return mask;
}

namespace {

constexpr char kMatrixMagic[4] = {'B', 'C', 'R', 'M'};
constexpr char kIndexMagic[4] = {'B', 'C', 'E', 'I'};
constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 32;

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void str(const std::string& s) {
    require(s.size() <= std::numeric_limits<std::uint32_t>::max(), "id too long");
    pod(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    auto n = pod<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t count) {
    need(count * sizeof(float));
    std::memcpy(dst, data_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorCode::Truncated, "truncated payload");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

struct Header {
  std::uint32_t provenance;
  std::uint64_t rows;
  std::uint64_t cols;
};

Header read_header(Reader& r, const char (&magic)[4]) {
  if (r.remaining() < 4) fail(ErrorCode::Truncated, "truncated header");
  char got[4];
  for (char& c : got) c = static_cast<char>(r.pod<std::uint8_t>());
  if (std::memcmp(got, magic, 4) != 0) fail(ErrorCode::BadMagic, "bad magic");
  auto version = r.pod<std::uint32_t>();
  if (version != kMatrixFormatVersion) {
    fail(ErrorCode::UnsupportedVersion, "unsupported version " + std::to_string(version));
  }
  Header h;
  h.provenance = r.pod<std::uint32_t>();
  h.rows = r.pod<std::uint64_t>();
  h.cols = r.pod<std::uint64_t>();
  if (h.rows > kMaxDim || h.cols > kMaxDim ||
      (h.cols != 0 && h.rows > std::numeric_limits<std::uint64_t>::max() / sizeof(float) / h.cols)) {
    fail(ErrorCode::DimensionOverflow, "dimension overflow");
  }
  return h;
}

std::vector<std::string> read_ids(Reader& r, std::uint64_t n) {
  // Each id needs at least its 4-byte length prefix.
  if (n > r.remaining() / 4) fail(ErrorCode::Truncated, "truncated id table");
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ids.push_back(r.str());
  return ids;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for " + path);
}

}  // namespace

std::string encode_matrix(const ResponseMatrix& m) {
  require(m.values.size() == m.n_images() * m.n_voxels(), "matrix values do not match ids");
  Writer w;
  w.bytes(kMatrixMagic, 4);
  w.pod(kMatrixFormatVersion);
  w.pod(static_cast<std::uint32_t>(m.provenance));
  w.pod(static_cast<std::uint64_t>(m.n_images()));
  w.pod(static_cast<std::uint64_t>(m.n_voxels()));
  for (const auto& id : m.image_ids) w.str(id);
  for (const auto& id : m.voxel_ids) w.str(id);
  w.bytes(reinterpret_cast<const char*>(m.values.data()), m.values.size() * sizeof(float));
  return w.take();
}

ResponseMatrix decode_matrix(const std::string& bytes) {
  Reader r(bytes);
  Header h = read_header(r, kMatrixMagic);
  if (h.provenance > 1) fail(ErrorCode::Parse, "unknown provenance code");
  ResponseMatrix m;
  m.provenance = static_cast<Provenance>(h.provenance);
  m.image_ids = read_ids(r, h.rows);
  m.voxel_ids = read_ids(r, h.cols);
  std::uint64_t count = h.rows * h.cols;
  if (count > r.remaining() / sizeof(float)) fail(ErrorCode::Truncated, "truncated payload");
  m.values.resize(count);
  r.floats(m.values.data(), count);
  m.check();
  return m;
}

void write_matrix(const ResponseMatrix& m, const std::string& path) {
  spit(path, encode_matrix(m));
}

ResponseMatrix read_matrix(const std::string& path) { return decode_matrix(slurp(path)); }

std::string encode_index(const EmbeddingIndex& index) {
  require(index.vectors.size() == index.size() * index.dim, "index values do not match ids");
  Writer w;
  w.bytes(kIndexMagic, 4);
  w.pod(kMatrixFormatVersion);
  w.pod(std::uint32_t{0});
  w.pod(static_cast<std::uint64_t>(index.size()));
  w.pod(static_cast<std::uint64_t>(index.dim));
  for (const auto& id : index.ids) w.str(id);
  w.bytes(reinterpret_cast<const char*>(index.vectors.data()),
          index.vectors.size() * sizeof(float));
  return w.take();
}

EmbeddingIndex decode_index(const std::string& bytes) {
  Reader r(bytes);
  Header h = read_header(r, kIndexMagic);
  EmbeddingIndex index;
  index.ids = read_ids(r, h.rows);
  index.dim = h.cols;
  std::uint64_t count = h.rows * h.cols;
  if (count > r.remaining() / sizeof(float)) fail(ErrorCode::Truncated, "truncated payload");
  index.vectors.resize(count);
  r.floats(index.vectors.data(), count);
  index.check_unit_norm();
  return index;
}

void write_index(const EmbeddingIndex& index, const std::string& path) {
  spit(path, encode_index(index));
}

EmbeddingIndex read_index(const std::string& path) { return decode_index(slurp(path)); }

}  // namespace causeloc
