#include "sift/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sift {

namespace {

constexpr char kMagic[8] = {'S', 'I', 'F', 'T', 'C', 'K', 'P', 'T'};

void write_branch(ByteWriter& w, const std::optional<BranchState>& b) {
  w.u8(b ? 1 : 0);
  if (!b) return;
  const auto& c = b->config;
  w.i64(c.d_enc);
  w.i64(c.group);
  w.i64(c.d_hidden);
  w.i64(c.d_llm);
  w.u8(c.bias ? 1 : 0);
  w.matrix(b->params.w1);
  if (c.bias) w.vector(b->params.b1);
  w.matrix(b->params.w2);
  if (c.bias) w.vector(b->params.b2);
}

std::optional<BranchState> read_branch(ByteReader& r) {
  const std::uint8_t present = r.u8();
  if (present == 0) return std::nullopt;
  if (present != 1) throw IoError("checkpoint: bad presence flag");
  BranchState b;
  auto dim = [&] {
    const std::int64_t v = r.i64();
    if (v < 1 || v > (std::int64_t{1} << 24)) throw IoError("checkpoint: implausible dimension");
    return static_cast<int>(v);
  };
  b.config.d_enc = dim();
  b.config.group = dim();
  b.config.d_hidden = dim();
  b.config.d_llm = dim();
  const std::uint8_t bias = r.u8();
  if (bias > 1) throw IoError("checkpoint: bad bias flag");
  b.config.bias = bias == 1;
  const auto need = static_cast<std::size_t>(model::count_params(b.config)) * sizeof(double);
  if (r.remaining() < need) throw IoError("checkpoint: truncated parameters");
  b.params = model::ProjectorParams::zeros(b.config);
  r.matrix(b.params.w1);
  if (b.config.bias) r.vector(b.params.b1);
  r.matrix(b.params.w2);
  if (b.config.bias) r.vector(b.params.b2);
  return b;
}

std::string hex_digest(std::span<const std::uint8_t> bytes) {
  const Digest d = sha256(bytes);
  return to_hex(d);
}

}  // namespace

std::string_view to_string(ParamGroup g) {
  return g == ParamGroup::proj_semantic ? "proj_semantic" : "proj_paralinguistic";
}

ParamGroup param_group_from_string(std::string_view s) {
  if (s == "proj_semantic") return ParamGroup::proj_semantic;
  if (s == "proj_paralinguistic") return ParamGroup::proj_paralinguistic;
  throw InvalidSpec("unknown parameter group '" + std::string(s) + "'");
}

const std::optional<BranchState>& Checkpoint::branch(ParamGroup g) const {
  return g == ParamGroup::proj_semantic ? semantic : paralinguistic;
}

std::optional<BranchState>& Checkpoint::branch(ParamGroup g) {
  return g == ParamGroup::proj_semantic ? semantic : paralinguistic;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic));
  w.u32(kCheckpointVersion);
  w.str(stage);
  w.u64(rng_state);
  for (ParamGroup g : kParamGroups) write_branch(w, branch(g));
  const Digest d = sha256(w.bytes());
  w.raw(d);
  return w.take();
}

Checkpoint Checkpoint::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 32) throw IoError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw IoError("checkpoint: bad magic");
  const auto body = bytes.first(bytes.size() - 32);
  const Digest d = sha256(body);
  if (!std::equal(d.begin(), d.end(), bytes.end() - 32)) throw IoError("checkpoint: content hash mismatch");
  try {
    ByteReader r(body.subspan(sizeof kMagic));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    c.stage = r.str();
    c.rng_state = r.u64();
    for (ParamGroup g : kParamGroups) c.branch(g) = read_branch(r);
    if (r.remaining() != 0) throw IoError("checkpoint: trailing bytes");
    return c;
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = serialize();
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
  const std::string s = read_file(path);
  return parse(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string Checkpoint::hash() const {
  const auto bytes = serialize();
  return to_hex(std::span(bytes).last(32));
}

std::string Checkpoint::group_hash(ParamGroup g) const {
  ByteWriter w;
  write_branch(w, branch(g));
  return hex_digest(w.bytes());
}

bool FreezeReport::passed() const {
  return std::all_of(max_abs_diff.begin(), max_abs_diff.end(), [](const auto& kv) { return kv.second == 0.0; });
}

FreezeReport verify_freeze(const Checkpoint& before, const Checkpoint& after, const std::set<ParamGroup>& frozen) {
  FreezeReport report;
  for (ParamGroup g : frozen) {
    const auto& a = before.branch(g);
    const auto& b = after.branch(g);
    if (a.has_value() != b.has_value())
      throw IncompatibleCheckpoints(std::string(to_string(g)) + " present in only one checkpoint");
    if (!a) {
      report.max_abs_diff[g] = 0.0;
      continue;
    }
    if (!(a->config == b->config)) throw IncompatibleCheckpoints(std::string(to_string(g)) + " shapes differ");
    double m = 0.0;
    auto upd = [&](const auto& x, const auto& y) {
      if (x.size() == 0) return;
      const double d = (x - y).cwiseAbs().maxCoeff();
      // NaN differences must not pass silently.
      m = std::isnan(d) ? std::numeric_limits<double>::infinity() : std::max(m, d);
    };
    upd(a->params.w1, b->params.w1);
    upd(a->params.b1, b->params.b1);
    upd(a->params.w2, b->params.w2);
    upd(a->params.b2, b->params.b2);
    report.max_abs_diff[g] = m;
  }
  return report;
}

}  // namespace sift
