#include "dysurv/checkpoint.hpp"

#include "dysurv/error.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dysurv {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'Y', 'S', 'U', 'R', 'V', '0', '1'};

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

json map_json(const QuantileMap& m) {
  return {{"references", std::vector<double>(m.references.data(), m.references.data() + m.references.size())},
          {"targets", std::vector<double>(m.targets.data(), m.targets.data() + m.targets.size())}};
}

QuantileMap map_from(const json& j) {
  QuantileMap m;
  const auto r = j.at("references").get<std::vector<double>>();
  const auto t = j.at("targets").get<std::vector<double>>();
  if (r.size() != t.size()) throw Error(ErrorCode::corrupt, "quantile map lengths differ");
  m.references = Eigen::Map<const Vector>(r.data(), static_cast<Index>(r.size()));
  m.targets = Eigen::Map<const Vector>(t.data(), static_cast<Index>(t.size()));
  return m;
}

json schema_json(const FeatureSchema& s) {
  json cols = json::array();
  for (const auto& c : s.static_columns) {
    cols.push_back({{"name", c.name},
                    {"kind", c.kind == ColumnKind::numeric ? "numeric" : "categorical"},
                    {"categories", c.categories}});
  }
  return {{"id_col", s.id_col},
          {"duration_col", s.duration_col},
          {"event_col", s.event_col},
          {"static", cols},
          {"series", s.series_features}};
}

FeatureSchema schema_from(const json& j) {
  FeatureSchema s;
  s.id_col = j.at("id_col");
  s.duration_col = j.at("duration_col");
  s.event_col = j.at("event_col");
  for (const auto& c : j.at("static")) {
    s.static_columns.push_back({c.at("name"),
                                c.at("kind") == "numeric" ? ColumnKind::numeric : ColumnKind::categorical,
                                c.at("categories").get<std::vector<std::string>>()});
  }
  s.series_features = j.at("series").get<std::vector<std::string>>();
  return s;
}

}  // namespace

void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path) {
  const auto& p = b.params;
  json h;
  h["format"] = 1;
  h["schema_hash"] = hex(b.pre.schema.hash());
  h["schema"] = schema_json(b.pre.schema);
  h["timestamps"] = b.pre.timestamps;
  h["grid"] = {{"k_bins", b.pre.grid.k_bins}, {"t_max", b.pre.grid.t_max}};
  json st = json::array(), se = json::array();
  for (const auto& m : b.pre.transform.static_maps) st.push_back(map_json(m));
  for (const auto& m : b.pre.transform.series_maps) se.push_back(map_json(m));
  h["transform"] = {{"static", st}, {"series", se}};
  h["model"] = {{"hidden", p.config.hidden},
                {"z_dim", p.config.z_dim},
                {"decoder_hidden", p.config.decoder_hidden},
                {"survival_hidden", p.config.survival_hidden},
                {"condition", condition_mode_name(p.config.condition)}};
  h["hyper"] = {{"alpha", p.alpha},
                {"dropout_keep", p.dropout_keep},
                {"latent", p.latent == LatentMode::stochastic ? "stochastic" : "deterministic"},
                {"seq_len", p.seq_len},
                {"width", p.width}};
  h["train"] = {{"learning_rate", b.config.learning_rate},
                {"batch_size", b.config.batch_size},
                {"max_epochs", b.config.max_epochs},
                {"patience", b.config.patience},
                {"seed", b.config.seed},
                {"clip_norm", b.config.clip_norm}};
  json shapes = json::array();
  for (std::size_t i = 0; i < p.store.size(); ++i) {
    const ad::ParamId id{i};
    shapes.push_back({{"name", p.store.name(id)}, {"rows", p.store[id].rows()}, {"cols", p.store[id].cols()}});
  }
  h["params"] = shapes;

  const std::string header = h.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < p.store.size(); ++i) {
    const Matrix& m = p.store[ad::ParamId{i}];
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path, const FeatureSchema* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::no_checkpoint, "no checkpoint at " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    if (bytes.size() - off < n) throw Error(ErrorCode::corrupt, "checkpoint is truncated");
    const char* p = bytes.data() + off;
    off += n;
    return p;
  };
  if (bytes.size() < sizeof kMagic || std::memcmp(take(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::corrupt, "bad checkpoint magic");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, take(sizeof len), sizeof len);
  if (len > bytes.size()) throw Error(ErrorCode::corrupt, "checkpoint is truncated");
  const char* hp = take(static_cast<std::size_t>(len));

  ModelBundle b;
  try {
    const json h = json::parse(hp, hp + len);
    b.pre.schema = schema_from(h.at("schema"));
    if (hex(b.pre.schema.hash()) != h.at("schema_hash").get<std::string>()) {
      throw Error(ErrorCode::corrupt, "stored schema does not match its hash");
    }
    if (expected && expected->hash() != b.pre.schema.hash()) {
      throw Error(ErrorCode::incompatible, "checkpoint was trained on a different feature schema");
    }
    b.pre.timestamps = h.at("timestamps").get<std::vector<double>>();
    b.pre.grid = make_time_grid(h.at("grid").at("k_bins"), h.at("grid").at("t_max"));
    for (const auto& m : h.at("transform").at("static")) b.pre.transform.static_maps.push_back(map_from(m));
    for (const auto& m : h.at("transform").at("series")) b.pre.transform.series_maps.push_back(map_from(m));

    ModelConfig mc;
    const auto& jm = h.at("model");
    mc.hidden = jm.at("hidden");
    mc.z_dim = jm.at("z_dim");
    mc.decoder_hidden = jm.at("decoder_hidden");
    mc.survival_hidden = jm.at("survival_hidden");
    mc.condition = parse_condition_mode(jm.at("condition"));
    const auto& hy = h.at("hyper");
    const LatentMode latent = hy.at("latent") == "stochastic" ? LatentMode::stochastic : LatentMode::deterministic;
    b.params = init_params(mc, hy.at("seq_len"), hy.at("width"), b.pre.grid.k_bins, hy.at("alpha"),
                           hy.at("dropout_keep"), 0, latent);

    const auto& tr = h.at("train");
    b.config.model = mc;
    b.config.alpha = hy.at("alpha");
    b.config.dropout_keep = hy.at("dropout_keep");
    b.config.latent = latent;
    b.config.learning_rate = tr.at("learning_rate");
    b.config.batch_size = tr.at("batch_size");
    b.config.max_epochs = tr.at("max_epochs");
    b.config.patience = tr.at("patience");
    b.config.seed = tr.at("seed");
    b.config.clip_norm = tr.at("clip_norm");

    const auto& shapes = h.at("params");
    if (shapes.size() != b.params.store.size()) throw Error(ErrorCode::corrupt, "parameter count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const ad::ParamId id{i};
      Matrix& m = b.params.store[id];
      if (shapes[i].at("name") != b.params.store.name(id) || shapes[i].at("rows") != m.rows() ||
          shapes[i].at("cols") != m.cols()) {
        throw Error(ErrorCode::corrupt, "parameter '" + b.params.store.name(id) + "' has an unexpected shape");
      }
      std::memcpy(m.data(), take(sizeof(double) * static_cast<std::size_t>(m.size())),
                  sizeof(double) * static_cast<std::size_t>(m.size()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt, std::string("malformed checkpoint header: ") + e.what());
  }
  if (off != bytes.size()) throw Error(ErrorCode::corrupt, "trailing bytes after the checkpoint payload");
  return b;
}

}  // namespace dysurv
