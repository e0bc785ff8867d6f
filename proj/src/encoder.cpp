#include "motion_forge/encoder.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace mforge {

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

constexpr char kCheckpointMagic[8] = {'M', 'F', 'O', 'R', 'G', 'E', 'C', 'K'};

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

}  // namespace

void CloudTensor::validate() const {
  if (points.rows() < 1) throw std::invalid_argument("CloudTensor: empty cloud");
  if (features.rows() != points.rows()) throw std::invalid_argument("CloudTensor: row mismatch");
  if (features.cols() < 4) throw std::invalid_argument("CloudTensor: fewer than 4 feature channels");
  if (!points.allFinite() || !features.allFinite()) throw std::invalid_argument("CloudTensor: non-finite entry");
}

CloudTensor make_cloud(const std::vector<std::pair<PointClass, const std::vector<Vec3>*>>& parts) {
  std::size_t n = 0;
  for (const auto& [cls, pts] : parts) n += pts->size();
  CloudTensor c;
  c.points.resize(static_cast<Eigen::Index>(n), 3);
  c.features = Matrix::Zero(static_cast<Eigen::Index>(n), kCloudFeatures);
  Eigen::Index row = 0;
  for (const auto& [cls, pts] : parts) {
    for (const auto& p : *pts) {
      c.points.row(row) = p.transpose();
      c.features(row, static_cast<int>(cls)) = 1.0;
      c.features.block<1, 3>(row, 3) = p.transpose();
      ++row;
    }
  }
  return c;
}

std::vector<int> furthest_point_sampling(const Points& points, int k, Rng& rng) {
  int n = static_cast<int>(points.rows());
  if (n < 1) throw std::invalid_argument("furthest_point_sampling: empty cloud");
  return furthest_point_sampling_from(points, k, static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
}

std::vector<int> furthest_point_sampling_from(const Points& points, int k, int start) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || k > n) throw std::invalid_argument("furthest_point_sampling: k out of range");
  if (start < 0 || start >= n) throw std::invalid_argument("furthest_point_sampling: bad start");
  std::vector<int> out{start};
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int last = start;
  while (static_cast<int>(out.size()) < k) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      double d = (points.row(i) - points.row(last)).squaredNorm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    out.push_back(best);
    last = best;
  }
  return out;
}

std::vector<std::vector<int>> ball_query(const Points& points, const Points& centers, double radius, int max_k) {
  if (radius <= 0.0 || max_k < 1) throw std::invalid_argument("ball_query: bad radius or max_k");
  const double r2 = radius * radius;
  std::vector<std::vector<int>> groups(centers.rows());
  std::vector<std::pair<double, int>> found;
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    found.clear();
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      double d = (points.row(i) - centers.row(c)).squaredNorm();
      if (d <= r2) found.emplace_back(d, static_cast<int>(i));
    }
    if (found.empty()) throw EmptyBall(static_cast<int>(c));
    std::size_t keep = std::min<std::size_t>(found.size(), static_cast<std::size_t>(max_k));
    std::partial_sort(found.begin(), found.begin() + static_cast<long>(keep), found.end());
    auto& g = groups[c];
    for (std::size_t i = 0; i < keep; ++i) g.push_back(found[i].second);
    while (static_cast<int>(g.size()) < max_k) g.push_back(g.front());
  }
  return groups;
}

EncoderProfile EncoderProfile::desk() {
  EncoderProfile p;
  p.name = "desk";
  p.blocks[0] = {64, 0.05, 16, {8, 8, 8}};
  p.blocks[1] = {16, 0.30, 16, {16, 16, 32}};
  p.blocks[2] = {0, 0.0, 0, {64, 64, 128}};
  p.head = {512, 512, 256};
  return p;
}

EncoderProfile EncoderProfile::paper() {
  EncoderProfile p;
  p.name = "paper";
  p.blocks[0] = {512, 0.05, 128, {64, 64, 64}};
  p.blocks[1] = {128, 0.30, 128, {128, 128, 256}};
  p.blocks[2] = {0, 0.0, 0, {512, 512, 1024}};
  p.head = {4096, 4096, 2048};
  return p;
}

EncoderProfile EncoderProfile::by_name(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown encoder profile: " + name);
}

EncoderParams EncoderParams::init(const EncoderProfile& profile, Rng& rng) {
  EncoderParams e;
  e.profile = profile;
  int channels = profile.input_features;
  for (int b = 0; b < 3; ++b) {
    e.blocks[b] = Mlp::init(channels + 3, profile.blocks[b].widths, true, true, true, rng);
    channels = profile.blocks[b].widths.back();
  }
  e.head = Mlp::init(channels, profile.head, true, false, false, rng);
  return e;
}

void EncoderParams::visit(const std::string& prefix, const ParameterVisitor& f) {
  for (int b = 0; b < 3; ++b) blocks[b].visit(prefix + ".sa" + std::to_string(b + 1), f);
  head.visit(prefix + ".head", f);
}

void EncoderParams::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  for (int b = 0; b < 3; ++b) blocks[b].visit(prefix + ".sa" + std::to_string(b + 1), f);
  head.visit(prefix + ".head", f);
}

CloudTensor set_abstraction(const CloudTensor& cloud, const SetAbstractionSpec& spec, const Mlp& mlp, int start,
                            SetAbstractionCache* cache) {
  const int n = cloud.size();
  const int c = static_cast<int>(cloud.features.cols());
  if (mlp.in() != c + 3) throw std::invalid_argument("set_abstraction: width mismatch");
  Points centers;
  std::vector<int> members;
  int group = 0;
  if (spec.global()) {
    centers = Points::Zero(1, 3);
    group = n;
    members.resize(n);
    std::iota(members.begin(), members.end(), 0);
  } else {
    auto picks = furthest_point_sampling_from(cloud.points, std::min(spec.samples, n), start);
    centers.resize(static_cast<Eigen::Index>(picks.size()), 3);
    for (std::size_t i = 0; i < picks.size(); ++i) centers.row(static_cast<Eigen::Index>(i)) = cloud.points.row(picks[i]);
    auto groups = ball_query(cloud.points, centers, spec.radius, spec.max_group);
    group = spec.max_group;
    for (const auto& g : groups) members.insert(members.end(), g.begin(), g.end());
  }
  const int s = static_cast<int>(centers.rows());
  Matrix rows(static_cast<Eigen::Index>(s) * group, c + 3);
  for (int g = 0; g < s; ++g) {
    for (int k = 0; k < group; ++k) {
      int r = g * group + k;
      int m = members[r];
      rows.block<1, 3>(r, 0) = cloud.points.row(m) - centers.row(g);
      rows.block(r, 3, 1, c) = cloud.features.row(m);
    }
  }
  CloudTensor out;
  out.points = centers;
  if (cache) {
    Matrix h = mlp.forward(rows, &cache->mlp);
    out.features = group_max_pool(h, group, &cache->argmax);
    cache->members = std::move(members);
    cache->group = group;
    cache->input_points = n;
  } else {
    out.features = group_max_pool(mlp.forward(rows), group, nullptr);
  }
  return out;
}

Matrix set_abstraction_backward(const SetAbstractionCache& cache, Mlp& mlp, const Matrix& d_out,
                                int input_channels) {
  Matrix dh = group_max_pool_backward(cache.argmax, d_out, static_cast<int>(cache.members.size()));
  Matrix drows = mlp.backward(cache.mlp, dh);
  Matrix df = Matrix::Zero(cache.input_points, input_channels);
  for (std::size_t r = 0; r < cache.members.size(); ++r) {
    df.row(cache.members[r]) += drows.block(static_cast<Eigen::Index>(r), 3, 1, input_channels);
  }
  return df;
}

CloudTensor deduplicate(const CloudTensor& cloud) {
  const int n = cloud.size();
  const int c = static_cast<int>(cloud.features.cols());
  auto less = [&](int a, int b) {
    for (int k = 0; k < 3; ++k) {
      if (cloud.points(a, k) != cloud.points(b, k)) return cloud.points(a, k) < cloud.points(b, k);
    }
    for (int k = 0; k < c; ++k) {
      if (cloud.features(a, k) != cloud.features(b, k)) return cloud.features(a, k) < cloud.features(b, k);
    }
    return a < b;
  };
  auto same = [&](int a, int b) {
    return cloud.points.row(a) == cloud.points.row(b) && cloud.features.row(a) == cloud.features.row(b);
  };
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), less);
  std::vector<char> keep(n, 1);
  for (int i = 1; i < n; ++i) {
    if (same(order[i], order[i - 1])) keep[order[i]] = 0;
  }
  int m = static_cast<int>(std::count(keep.begin(), keep.end(), 1));
  if (m == n) return cloud;
  CloudTensor out;
  out.points.resize(m, 3);
  out.features.resize(m, c);
  int row = 0;
  for (int i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    out.points.row(row) = cloud.points.row(i);
    out.features.row(row) = cloud.features.row(i);
    ++row;
  }
  return out;
}

RowVector encode_cloud(const CloudTensor& cloud, const EncoderParams& params, Rng& rng, EncoderCache* cache) {
  CloudTensor unique = deduplicate(cloud);
  int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(unique.size())));
  return encode_cloud_from(unique, params, start, cache);
}

RowVector encode_cloud_from(const CloudTensor& cloud, const EncoderParams& params, int start,
                            EncoderCache* cache) {
  cloud.validate();
  if (cloud.features.cols() != params.profile.input_features) {
    throw std::invalid_argument("encode_cloud: feature width mismatch");
  }
  CloudTensor unique = deduplicate(cloud);
  CloudTensor x = unique;
  for (int b = 0; b < 3; ++b) {
    if (cache) cache->channels[b] = static_cast<int>(x.features.cols());
    x = set_abstraction(x, params.profile.blocks[b], params.blocks[b], b == 0 ? start : 0,
                        cache ? &cache->blocks[b] : nullptr);
  }
  return params.head.forward(x.features, cache ? &cache->head : nullptr).row(0);
}

void encode_backward(const EncoderCache& cache, EncoderParams& params, const RowVector& d_embedding) {
  Matrix d = params.head.backward(cache.head, d_embedding);
  for (int b = 2; b >= 0; --b) d = set_abstraction_backward(cache.blocks[b], params.blocks[b], d, cache.channels[b]);
}

void write_checkpoint(const std::filesystem::path& path, const std::string& profile,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["profile"] = profile;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"rows", t->value.rows()}, {"cols", t->value.cols()}});
  }
  std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint32_t len = to_le(static_cast<std::uint32_t>(text.size()));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    for (Eigen::Index r = 0; r < t->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
        std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(t->value(r, c))));
        out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
      }
    }
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path) {
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw CheckpointError("not a checkpoint");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  len = to_le(len);
  if (!in || len > (1u << 26)) throw CheckpointError("bad checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("format_version", 0) != 1) {
    throw CheckpointError("unsupported checkpoint format_version");
  }
  return header;
}

}  // namespace

std::string read_checkpoint_profile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return read_header(in, path).at("profile").get<std::string>();
}

std::string read_checkpoint(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, Tensor*>>& tensors) {
  std::ifstream in(path, std::ios::binary);
  nlohmann::json header = read_header(in, path);
  const auto& list = header.at("tensors");
  if (list.size() != tensors.size()) throw CheckpointError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto* t = tensors[i].second;
    if (list[i].at("name") != tensors[i].first || list[i].at("rows") != t->value.rows() ||
        list[i].at("cols") != t->value.cols()) {
      throw CheckpointError("checkpoint shape mismatch at " + tensors[i].first);
    }
  }
  for (auto& [name, t] : tensors) {
    for (Eigen::Index r = 0; r < t->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
        std::uint32_t bits = 0;
        in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
        t->value(r, c) = static_cast<double>(std::bit_cast<float>(to_le(bits)));
      }
    }
  }
  if (!in) throw CheckpointError("truncated checkpoint data");
  return header.at("profile").get<std::string>();
}

}  // namespace mforge
