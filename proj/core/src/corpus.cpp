#include "sift/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sift::corpus {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Branch b) {
  return b == Branch::semantic ? "semantic" : "paralinguistic";
}

Branch branch_from_string(std::string_view s) {
  if (s == "semantic") return Branch::semantic;
  if (s == "paralinguistic") return Branch::paralinguistic;
  throw InvalidSpec("unknown branch '" + std::string(s) + "'");
}

bool is_attribute_key(std::string_view key) {
  return std::find(kAttributeKeys.begin(), kAttributeKeys.end(), key) != kAttributeKeys.end();
}

namespace {

SpeechRecord parse_record(const json& j, std::size_t line_no) {
  auto fail = [&](const std::string& reason) -> MalformedRecord {
    return MalformedRecord("line " + std::to_string(line_no) + ": " + reason);
  };
  if (!j.is_object()) throw fail("not a JSON object");
  static const std::set<std::string> kKnown = {"id",     "transcript", "attributes",          "source",
                                               "duration_s", "feature_ref", "transcript_generated"};
  for (const auto& [k, _] : j.items())
    if (!kKnown.count(k)) throw fail("unknown field '" + k + "'");

  SpeechRecord r;
  auto req_string = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw fail(std::string("missing field '") + key + "'");
    if (!j[key].is_string()) throw fail(std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  r.id = req_string("id");
  if (r.id.empty()) throw fail("empty id");
  r.transcript = req_string("transcript");
  r.source = req_string("source");

  if (!j.contains("attributes") || !j["attributes"].is_object())
    throw fail("missing or non-object field 'attributes'");
  for (const auto& [k, v] : j["attributes"].items()) {
    if (!is_attribute_key(k)) throw fail("attribute key '" + k + "' outside the declared vocabulary");
    if (!v.is_string() || v.get<std::string>().empty())
      throw fail("attribute '" + k + "' must be a nonempty string");
    r.attributes[k] = v.get<std::string>();
  }

  if (!j.contains("duration_s") || !j["duration_s"].is_number())
    throw fail("missing or non-numeric field 'duration_s'");
  r.duration_s = j["duration_s"].get<double>();
  if (!(r.duration_s >= 0.0) || !std::isfinite(r.duration_s)) throw fail("duration_s must be >= 0");

  if (!j.contains("feature_ref")) throw fail("missing field 'feature_ref'");
  if (j["feature_ref"].is_string()) {
    r.feature_ref = j["feature_ref"].get<std::string>();
  } else if (!j["feature_ref"].is_null()) {
    throw fail("feature_ref must be a string or null");
  }

  if (j.contains("transcript_generated")) {
    if (!j["transcript_generated"].is_boolean()) throw fail("transcript_generated must be a boolean");
    r.transcript_generated = j["transcript_generated"].get<bool>();
  }
  if (r.transcript.empty() && r.transcript_generated)
    throw fail("empty transcript flagged as generated");
  return r;
}

}  // namespace

std::vector<SpeechRecord> parse_corpus(std::string_view text, CorpusSchema) {
  std::vector<SpeechRecord> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": " + e.what());
    }
    SpeechRecord r = parse_record(j, line_no);
    if (!seen.insert(r.id).second) throw DuplicateId(r.id);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SpeechRecord> load_corpus(const std::string& path, CorpusSchema schema) {
  return parse_corpus(read_file(path), schema);
}

std::string record_to_json_line(const SpeechRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["transcript"] = r.transcript;
  ordered_json attrs = ordered_json::object();
  for (std::string_view key : kAttributeKeys) {
    auto it = r.attributes.find(std::string(key));
    if (it != r.attributes.end()) attrs[it->first] = it->second;
  }
  j["attributes"] = attrs;
  j["source"] = r.source;
  j["duration_s"] = r.duration_s;
  j["feature_ref"] = r.feature_ref ? ordered_json(*r.feature_ref) : ordered_json(nullptr);
  if (r.transcript_generated) j["transcript_generated"] = true;
  return j.dump();
}

std::string serialize_corpus(const std::vector<SpeechRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json_line(r);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic world

namespace {

constexpr std::uint64_t kWorldStream = 0xffffffff00000000ULL;

void validate(const SyntheticWorldSpec& s) {
  if (s.vocab.empty()) throw InvalidSpec("vocab must be nonempty");
  std::set<std::string> uniq(s.vocab.begin(), s.vocab.end());
  if (uniq.size() != s.vocab.size()) throw InvalidSpec("vocab symbols must be unique");
  for (const auto& w : s.vocab)
    if (w.empty() || w.find_first_of(" \t\n") != std::string::npos)
      throw InvalidSpec("vocab symbol '" + w + "' must be a nonempty single word");
  if (s.transcript_len_min < 1 || s.transcript_len_max < s.transcript_len_min)
    throw InvalidSpec("transcript_len_range must satisfy 1 <= min <= max");
  if (s.frames_per_symbol < 1) throw InvalidSpec("frames_per_symbol must be >= 1");
  if (s.d_enc < 1) throw InvalidSpec("d_enc must be >= 1");
  if (!(s.noise_sigma >= 0.0)) throw InvalidSpec("noise_sigma must be >= 0");
  if (!(s.frame_rate_hz > 0.0)) throw InvalidSpec("frame_rate_hz must be > 0");
  for (const auto& [k, values] : s.attribute_vocab) {
    if (!is_attribute_key(k)) throw InvalidSpec("attribute '" + k + "' outside the declared vocabulary");
    if (values.empty()) throw InvalidSpec("attribute '" + k + "' has no values");
    for (const auto& v : values)
      if (v.empty()) throw InvalidSpec("attribute '" + k + "' has an empty value");
  }
}

}  // namespace

SyntheticWorld::SyntheticWorld(SyntheticWorldSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  Rng rng(derive_seed(spec_.seed, {kWorldStream, 1}));
  const int d = spec_.d_enc;
  const int nv = static_cast<int>(spec_.vocab.size());
  symbols_.resize(d, nv);
  for (int c = 0; c < nv; ++c)
    for (int r = 0; r < d; ++r) symbols_(r, c) = rng.normal();

  int n_offsets = 0;
  for (std::string_view key : kAttributeKeys) {
    auto it = spec_.attribute_vocab.find(std::string(key));
    if (it == spec_.attribute_vocab.end()) continue;
    for (const auto& value : it->second) {
      Vector v(d);
      for (int r = 0; r < d; ++r) v[r] = rng.normal();
      offsets_[it->first][value] = std::move(v);
      ++n_offsets;
    }
  }

  // Symbol columns and attribute offsets must be jointly linearly independent
  // so the two branches carry separable information.
  Matrix joint(d, nv + n_offsets);
  joint.leftCols(nv) = symbols_;
  int col = nv;
  for (const auto& [_, values] : offsets_)
    for (const auto& [__, v] : values) joint.col(col++) = v;
  Eigen::ColPivHouseholderQR<Matrix> qr(joint);
  qr.setThreshold(1e-9);
  if (qr.rank() != joint.cols())
    throw InvalidSpec("symbol and attribute vectors are not linearly independent (rank " +
                      std::to_string(qr.rank()) + " < " + std::to_string(joint.cols()) +
                      "); increase d_enc");

  for (int i = 0; i < nv; ++i) symbol_ids_[spec_.vocab[i]] = i;
}

Vector SyntheticWorld::attribute_offset(const std::string& key, const std::string& value) const {
  auto k = offsets_.find(key);
  if (k == offsets_.end()) throw InvalidSpec("attribute '" + key + "' not in world");
  auto v = k->second.find(value);
  if (v == k->second.end()) throw InvalidSpec("value '" + value + "' not in attribute '" + key + "'");
  return v->second;
}

int SyntheticWorld::symbol_index(std::string_view word) const {
  auto it = symbol_ids_.find(word);
  return it == symbol_ids_.end() ? -1 : it->second;
}

SpeechRecord SyntheticWorld::make_record(std::uint64_t index) const {
  Rng rng(derive_seed(spec_.seed, {index, 0}));
  const auto span = static_cast<std::size_t>(spec_.transcript_len_max - spec_.transcript_len_min + 1);
  const int len = spec_.transcript_len_min + static_cast<int>(rng.index(span));
  SpeechRecord r;
  r.id = "syn" + std::to_string(spec_.seed) + "-" + std::to_string(index);
  for (int i = 0; i < len; ++i) {
    if (i) r.transcript += ' ';
    r.transcript += spec_.vocab[rng.index(spec_.vocab.size())];
  }
  for (std::string_view key : kAttributeKeys) {
    auto it = spec_.attribute_vocab.find(std::string(key));
    if (it == spec_.attribute_vocab.end()) continue;
    r.attributes[it->first] = it->second[rng.index(it->second.size())];
  }
  r.feature_ref = "synthetic:" + std::to_string(index);
  r.source = "synthetic";
  r.duration_s = static_cast<double>(len * spec_.frames_per_symbol) / spec_.frame_rate_hz;
  return r;
}

FeatureMatrix SyntheticWorld::features(const SpeechRecord& record, Branch branch) const {
  constexpr std::string_view kPrefix = "synthetic:";
  if (!record.feature_ref || !record.feature_ref->starts_with(kPrefix))
    throw FeatureUnavailable(record.id + " (" + std::string(to_string(branch)) + ")");
  std::uint64_t index = 0;
  try {
    index = std::stoull(record.feature_ref->substr(kPrefix.size()));
  } catch (const std::exception&) {
    throw FeatureUnavailable(record.id + ": bad feature_ref '" + *record.feature_ref + "'");
  }

  std::vector<int> symbols;
  std::istringstream words(record.transcript);
  for (std::string w; words >> w;) {
    const int s = symbol_index(w);
    if (s < 0) throw FeatureUnavailable(record.id + ": word '" + w + "' not in world vocab");
    symbols.push_back(s);
  }
  if (symbols.empty()) throw FeatureUnavailable(record.id + ": empty transcript");

  const int fps = spec_.frames_per_symbol;
  const Eigen::Index T = static_cast<Eigen::Index>(symbols.size()) * fps;
  const int d = spec_.d_enc;
  FeatureMatrix out;
  out.branch = branch;
  out.frame_rate_hz = spec_.frame_rate_hz;
  out.data.resize(T, d);
  if (branch == Branch::semantic) {
    for (std::size_t i = 0; i < symbols.size(); ++i)
      for (int k = 0; k < fps; ++k)
        out.data.row(static_cast<Eigen::Index>(i) * fps + k) = symbols_.col(symbols[i]).transpose();
  } else {
    RowVector sum = RowVector::Zero(d);
    for (const auto& [key, value] : record.attributes) {
      auto k = offsets_.find(key);
      if (k == offsets_.end()) continue;
      auto v = k->second.find(value);
      if (v == k->second.end())
        throw FeatureUnavailable(record.id + ": attribute value '" + value + "' not in world");
      sum += v->second.transpose();
    }
    out.data.rowwise() = sum;
  }
  if (spec_.noise_sigma > 0.0) {
    Rng rng(derive_seed(spec_.seed, {index, branch == Branch::semantic ? 2u : 3u}));
    for (Eigen::Index t = 0; t < T; ++t)
      for (int c = 0; c < d; ++c) out.data(t, c) += spec_.noise_sigma * rng.normal();
  }
  return out;
}

std::string SyntheticWorld::state_hash() const {
  ByteWriter w;
  w.u64(spec_.seed);
  w.matrix(symbols_);
  for (const auto& [key, values] : offsets_) {
    w.str(key);
    for (const auto& [value, v] : values) {
      w.str(value);
      w.vector(v);
    }
  }
  return to_hex(sha256(w.bytes()));
}

std::vector<SpeechRecord> make_synthetic_corpus(const SyntheticWorldSpec& spec, std::int64_t n,
                                                std::uint64_t first_index) {
  if (n < 1) throw InvalidSpec("corpus size must be >= 1, got " + std::to_string(n));
  SyntheticWorld world(spec);
  std::vector<SpeechRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.push_back(world.make_record(first_index + static_cast<std::uint64_t>(i)));
  return out;
}

FeatureMatrix SyntheticEncoder::encode(const SpeechRecord& record, Branch branch) const {
  return world_->features(record, branch);
}

// ---------------------------------------------------------------------------
// Feature store

namespace {
constexpr std::string_view kStoreMagic = "SIFTFEAT";
constexpr std::uint32_t kStoreVersion = 1;
}  // namespace

void FeatureStore::put(const std::string& id, FeatureMatrix features) {
  if (width_ == 0) width_ = static_cast<int>(features.width());
  if (features.width() != width_) throw DimMismatch("feature width differs within store");
  entries_[{id, static_cast<int>(features.branch)}] = std::move(features);
}

std::string FeatureStore::serialize() const {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kStoreMagic.data()), kStoreMagic.size()});
  w.u32(kStoreVersion);
  w.u64(entries_.size());
  for (const auto& [key, fm] : entries_) {
    w.str(key.first);
    w.u8(static_cast<std::uint8_t>(key.second));
    w.f64(fm.frame_rate_hz);
    w.u32(static_cast<std::uint32_t>(fm.data.rows()));
    w.u32(static_cast<std::uint32_t>(fm.data.cols()));
    w.matrix(fm.data);
  }
  const auto& b = w.bytes();
  return std::string(b.begin(), b.end());
}

void FeatureStore::save(const std::string& path) const { write_file(path, serialize()); }

FeatureStore FeatureStore::load(const std::string& path) {
  const std::string raw = read_file(path);
  ByteReader r({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
  std::string magic;
  for (std::size_t i = 0; i < kStoreMagic.size(); ++i) magic.push_back(static_cast<char>(r.u8()));
  if (magic != kStoreMagic) throw IoError(path + ": not a feature store");
  if (r.u32() != kStoreVersion) throw IoError(path + ": unsupported feature store version");
  FeatureStore store;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string id = r.str();
    const int branch = r.u8();
    if (branch > 1) throw IoError(path + ": bad branch tag");
    FeatureMatrix fm;
    fm.branch = static_cast<Branch>(branch);
    fm.frame_rate_hz = r.f64();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    fm.data.resize(rows, cols);
    r.matrix(fm.data);
    store.put(id, std::move(fm));
  }
  return store;
}

FeatureMatrix FeatureStore::encode(const SpeechRecord& record, Branch branch) const {
  auto it = entries_.find({record.id, static_cast<int>(branch)});
  if (it == entries_.end())
    throw FeatureUnavailable(record.id + " (" + std::string(to_string(branch)) + ")");
  return it->second;
}

// ---------------------------------------------------------------------------

void EncoderSet::add(Branch branch, std::shared_ptr<const Encoder> encoder) {
  encoders_[branch] = std::move(encoder);
}

bool EncoderSet::has(Branch branch) const { return encoders_.count(branch) != 0; }

int EncoderSet::width(Branch branch) const {
  auto it = encoders_.find(branch);
  if (it == encoders_.end()) throw FeatureUnavailable("no encoder registered for " + std::string(to_string(branch)));
  return it->second->width();
}

FeatureMatrix EncoderSet::encode(const SpeechRecord& record, Branch branch) const {
  auto it = encoders_.find(branch);
  if (it == encoders_.end())
    throw FeatureUnavailable(record.id + " (" + std::string(to_string(branch)) + "): no encoder registered");
  FeatureMatrix fm = it->second->encode(record, branch);
  if (fm.frames() < 1) throw FeatureUnavailable(record.id + ": zero-length features");
  if (fm.width() != it->second->width())
    throw DimMismatch(record.id + ": feature width " + std::to_string(fm.width()) + " != declared " +
                      std::to_string(it->second->width()));
  fm.branch = branch;
  return fm;
}

}  // namespace sift::corpus
