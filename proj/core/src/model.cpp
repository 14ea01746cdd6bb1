#include "cct/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <utility>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cct {

namespace {

template <class Enum, std::size_t N>
Enum parse_enum(const nlohmann::json& doc, const char* key, Enum fallback,
                const std::pair<Enum, const char*> (&names)[N]) {
  if (!doc.contains(key)) return fallback;
  const auto text = doc.at(key).get<std::string>();
  for (const auto& [value, name] : names) {
    if (text == name) return value;
  }
  throw std::invalid_argument(std::string("unknown ") + key + " '" + text + "'");
}

template <class Enum, std::size_t N>
const char* enum_name(Enum value, const std::pair<Enum, const char*> (&names)[N]) {
  for (const auto& [v, name] : names) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::pair<BlockStyle, const char*> kBlockStyles[] = {
    {BlockStyle::paper_addnorm, "paper_addnorm"}, {BlockStyle::prenorm_mlp, "prenorm_mlp"}};
constexpr std::pair<PositionalEncoding, const char*> kPositionals[] = {
    {PositionalEncoding::rotary, "rotary"}, {PositionalEncoding::none, "none"}};
constexpr std::pair<DurationBiasMode, const char*> kBiasModes[] = {
    {DurationBiasMode::additive_log, "additive_log"},
    {DurationBiasMode::multiplicative, "multiplicative"}};

std::string layer_prefix(int i) { return "layers." + std::to_string(i) + "."; }

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  enum class Init { normal, ones, zeros } init = Init::normal;
};

std::vector<TensorSpec> expected_tensors(const ModelConfig& c) {
  const std::int64_t dm = c.d_model;
  const std::int64_t inner = static_cast<std::int64_t>(c.head_count) * c.d_head;
  std::vector<TensorSpec> specs{{"embed.weight", {c.vocab_size, dm}}};
  if (!c.tied_embeddings) specs.push_back({"unembed.weight", {c.vocab_size, dm}});
  for (int i = 0; i < c.layer_count; ++i) {
    const auto p = layer_prefix(i);
    for (const char* m : {"q", "k", "v"}) {
      specs.push_back({p + "attn." + m + ".weight", {inner, dm}});
    }
    specs.push_back({p + "attn.o.weight", {dm, inner}});
    if (c.block_style == BlockStyle::paper_addnorm) {
      specs.push_back({p + "attn.z.weight", {dm, dm}});
    } else {
      specs.push_back({p + "mlp.up.weight", {c.mlp_hidden, dm}});
      specs.push_back({p + "mlp.down.weight", {dm, c.mlp_hidden}});
    }
    for (const char* n : {"norm1", "norm2"}) {
      specs.push_back({p + n + ".gain", {dm}, TensorSpec::Init::ones});
      specs.push_back({p + n + ".bias", {dm}, TensorSpec::Init::zeros});
    }
  }
  std::sort(specs.begin(), specs.end(),
            [](const TensorSpec& a, const TensorSpec& b) { return a.name < b.name; });
  return specs;
}

MatrixF to_matrix(const Tensor& t) {
  return MatrixF(static_cast<std::size_t>(t.shape.at(0)), static_cast<std::size_t>(t.shape.at(1)),
                 t.values);
}

// Rows [h * d_head, (h + 1) * d_head) of a stacked projection.
MatrixF head_slice(const MatrixF& stacked, int h, int d_head) {
  MatrixF out(static_cast<std::size_t>(d_head), stacked.cols());
  for (int r = 0; r < d_head; ++r) {
    const auto src = stacked.row(static_cast<std::size_t>(h * d_head + r));
    std::copy(src.begin(), src.end(), out.row(static_cast<std::size_t>(r)).begin());
  }
  return out;
}

bool all_finite(const MatrixF& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](float v) { return std::isfinite(v); });
}

float silu(float v) { return v / (1.0f + std::exp(-v)); }

}  // namespace

void ModelConfig::validate() const {
  if (layer_count < 0) throw std::invalid_argument("layer_count must be >= 0");
  if (head_count <= 0 || d_model <= 0 || d_head <= 0) {
    throw std::invalid_argument("head_count, d_model and d_head must be positive");
  }
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (mlp_hidden < 0) throw std::invalid_argument("mlp_hidden must be >= 0");
  if (block_style == BlockStyle::prenorm_mlp && mlp_hidden == 0) {
    throw std::invalid_argument("prenorm_mlp blocks need mlp_hidden > 0");
  }
  if (positional == PositionalEncoding::rotary) {
    const int dim = rotary_dim == 0 ? d_head : rotary_dim;
    if (dim % 2 != 0 || dim > d_head || dim < 0) {
      throw std::invalid_argument("rotary_dim must be even and <= d_head");
    }
    if (!(rotary_base > 0.0)) throw std::invalid_argument("rotary_base must be > 0");
  }
}

RotaryConfig ModelConfig::rotary() const {
  return {positional == PositionalEncoding::rotary, rotary_base, rotary_dim};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  try {
    c.layer_count = doc.value("layer_count", c.layer_count);
    c.head_count = doc.value("head_count", c.head_count);
    c.d_model = doc.value("d_model", c.d_model);
    c.d_head = doc.value("d_head", c.d_head);
    c.vocab_size = doc.value("vocab_size", c.vocab_size);
    c.mlp_hidden = doc.value("mlp_hidden", c.mlp_hidden);
    c.block_style = parse_enum(doc, "block_style", c.block_style, kBlockStyles);
    c.positional = parse_enum(doc, "positional", c.positional, kPositionals);
    c.rotary_base = doc.value("rotary_base", c.rotary_base);
    c.rotary_dim = doc.value("rotary_dim", c.rotary_dim);
    c.tied_embeddings = doc.value("tied_embeddings", c.tied_embeddings);
    c.bias_mode = parse_enum(doc, "bias_mode", c.bias_mode, kBiasModes);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layer_count", layer_count},   {"head_count", head_count},
          {"d_model", d_model},           {"d_head", d_head},
          {"vocab_size", vocab_size},     {"mlp_hidden", mlp_hidden},
          {"block_style", enum_name(block_style, kBlockStyles)},
          {"positional", enum_name(positional, kPositionals)},
          {"rotary_base", rotary_base},   {"rotary_dim", rotary_dim},
          {"tied_embeddings", tied_embeddings},
          {"bias_mode", enum_name(bias_mode, kBiasModes)}};
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config " + path);
  try {
    return ModelConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model config " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

LabelSet::LabelSet(std::vector<Label> labels) : labels_{std::move(labels)} {
  if (labels_.empty()) throw std::invalid_argument("label set must be non-empty");
  std::set<std::string> names;
  std::set<int> ids;
  for (const auto& l : labels_) {
    if (l.token_ids.empty()) throw std::invalid_argument("label " + l.name + " has no token ids");
    if (!names.insert(l.name).second) throw std::invalid_argument("duplicate label " + l.name);
    for (int id : l.token_ids) {
      if (id < 0) throw std::invalid_argument("label " + l.name + " has a negative token id");
      if (!ids.insert(id).second) {
        throw std::invalid_argument("token id " + std::to_string(id) + " used by two labels");
      }
    }
  }
}

LabelSet LabelSet::digits(int count) {
  std::vector<Label> labels;
  for (int i = 0; i < count; ++i) labels.push_back({std::to_string(i), {i}});
  return LabelSet{std::move(labels)};
}

LabelSet LabelSet::from_json(const nlohmann::json& doc) {
  std::vector<Label> labels;
  try {
    for (const auto& l : doc.at("labels")) {
      labels.push_back({l.at("name").get<std::string>(), l.at("ids").get<std::vector<int>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("label set: ") + e.what());
  }
  return LabelSet{std::move(labels)};
}

LabelSet LabelSet::parse_inline(const std::string& text) {
  std::vector<Label> labels;
  std::stringstream entries(text);
  std::string entry;
  while (std::getline(entries, entry, ',')) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("label entry '" + entry + "' is not name=id[+id]");
    }
    Label l{entry.substr(0, eq), {}};
    std::stringstream ids(entry.substr(eq + 1));
    std::string id;
    while (std::getline(ids, id, '+')) {
      try {
        std::size_t used = 0;
        l.token_ids.push_back(std::stoi(id, &used));
        if (used != id.size()) throw std::invalid_argument(id);
      } catch (const std::exception&) {
        throw std::invalid_argument("label entry '" + entry + "' has a non-integer id");
      }
    }
    labels.push_back(std::move(l));
  }
  return LabelSet{std::move(labels)};
}

void LabelSet::validate(int vocab_size) const {
  for (const auto& l : labels_) {
    for (int id : l.token_ids) {
      if (id >= vocab_size) {
        throw std::invalid_argument("label " + l.name + " uses token id " + std::to_string(id) +
                                    " >= vocab_size " + std::to_string(vocab_size));
      }
    }
  }
}

std::vector<std::string> LabelSet::names() const {
  std::vector<std::string> out;
  for (const auto& l : labels_) out.push_back(l.name);
  return out;
}

nlohmann::json LabelSet::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : labels_) arr.push_back({{"name", l.name}, {"ids", l.token_ids}});
  return {{"labels", arr}};
}

ProbabilityTable next_token_distribution(std::span<const float> logits, const LabelSet* labels) {
  ProbabilityTable table;
  if (logits.empty()) return table;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (float v : logits) max_logit = std::max(max_logit, static_cast<double>(v));
  table.full.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    table.full[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    z += table.full[i];
  }
  for (auto& p : table.full) p /= z;

  std::vector<bool> labelled(logits.size(), false);
  if (labels != nullptr) {
    labels->validate(static_cast<int>(logits.size()));
    for (const auto& l : labels->labels()) {
      double mass = 0.0;
      for (int id : l.token_ids) {
        mass += table.full[static_cast<std::size_t>(id)];
        labelled[static_cast<std::size_t>(id)] = true;
      }
      table.label_probs.push_back(mass);
    }
  }
  for (std::size_t i = 0; i < table.full.size(); ++i) {
    if (!labelled[i]) table.other += table.full[i];
  }
  return table;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, TensorArchive archive)
    : config_{std::move(config)}, archive_{std::move(archive)} {
  config_.validate();
  const auto specs = expected_tensors(config_);
  std::set<std::string> expected_names;
  for (const auto& spec : specs) {
    expected_names.insert(spec.name);
    if (!archive_.contains(spec.name)) throw ArchiveError("archive is missing tensor " + spec.name);
    if (archive_.at(spec.name).shape != spec.shape) {
      std::string got;
      for (auto d : archive_.at(spec.name).shape) got += std::to_string(d) + " ";
      throw ArchiveError("tensor " + spec.name + " has unexpected shape [ " + got + "]");
    }
  }
  for (const auto& [name, tensor] : archive_.tensors()) {
    if (!expected_names.count(name)) throw ArchiveError("unexpected tensor " + name);
  }

  embed_ = to_matrix(archive_.at("embed.weight"));
  unembed_ = config_.tied_embeddings ? embed_ : to_matrix(archive_.at("unembed.weight"));
  for (int i = 0; i < config_.layer_count; ++i) {
    const auto p = layer_prefix(i);
    LayerWeights lw;
    auto& attn = lw.block.attention;
    attn.d_model = config_.d_model;
    attn.head_count = config_.head_count;
    attn.head_dim = config_.d_head;
    const auto q = to_matrix(archive_.at(p + "attn.q.weight"));
    const auto k = to_matrix(archive_.at(p + "attn.k.weight"));
    const auto v = to_matrix(archive_.at(p + "attn.v.weight"));
    for (int h = 0; h < config_.head_count; ++h) {
      attn.w_q.push_back(head_slice(q, h, config_.d_head));
      attn.w_k.push_back(head_slice(k, h, config_.d_head));
      attn.w_v.push_back(head_slice(v, h, config_.d_head));
    }
    attn.w_o = to_matrix(archive_.at(p + "attn.o.weight"));
    lw.block.norm1_gain = archive_.at(p + "norm1.gain").values;
    lw.block.norm1_bias = archive_.at(p + "norm1.bias").values;
    lw.block.norm2_gain = archive_.at(p + "norm2.gain").values;
    lw.block.norm2_bias = archive_.at(p + "norm2.bias").values;
    if (config_.block_style == BlockStyle::paper_addnorm) {
      lw.block.w_z = to_matrix(archive_.at(p + "attn.z.weight"));
      lw.block.validate();
    } else {
      attn.validate();
      lw.mlp_up = to_matrix(archive_.at(p + "mlp.up.weight"));
      lw.mlp_down = to_matrix(archive_.at(p + "mlp.down.weight"));
    }
    layers_.push_back(std::move(lw));
  }
}

Model Model::load(const std::string& archive_path, ModelConfig config) {
  return Model{std::move(config), TensorArchive::load(archive_path)};
}

StepwiseSentence Model::embed(std::span<const int> token_ids) const {
  if (token_ids.empty()) throw std::invalid_argument("embed: empty token id list");
  std::vector<std::vector<float>> rows;
  rows.reserve(token_ids.size());
  for (int id : token_ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
    const auto r = embed_.row(static_cast<std::size_t>(id));
    rows.emplace_back(r.begin(), r.end());
  }
  return from_embeddings(rows);
}

StepwiseSentence Model::resolve(const PromptDocument& prompt) const {
  std::vector<TokenSpan> spans;
  for (const auto& s : prompt.spans) {
    if (s.token_id) {
      const int id = *s.token_id;
      if (id < 0 || id >= config_.vocab_size) {
        throw std::out_of_range("prompt token id " + std::to_string(id) + " outside vocabulary");
      }
      const auto r = embed_.row(static_cast<std::size_t>(id));
      spans.push_back({{r.begin(), r.end()}, s.duration});
    } else {
      if (s.embedding->size() != static_cast<std::size_t>(config_.d_model)) {
        throw std::invalid_argument("prompt embedding dimension does not match d_model");
      }
      spans.push_back({*s.embedding, s.duration});
    }
  }
  return StepwiseSentence{std::move(spans), prompt.origin};
}

template <class Attend>
ForwardOutput Model::run_layers(MatrixF x, Attend&& attend, bool keep_hidden) const {
  ForwardOutput out;
  const std::size_t n = x.rows();
  for (int li = 0; li < config_.layer_count; ++li) {
    const auto& layer = layers_[static_cast<std::size_t>(li)];
    const auto& block = layer.block;
    MatrixF next(n, x.cols());
    if (config_.block_style == BlockStyle::paper_addnorm) {
      const MatrixF y = attend(x, block.attention);
      for (std::size_t t = 0; t < n; ++t) {
        const auto r = add_norm_block<float>(x.row(t), y.row(t), block);
        std::copy(r.begin(), r.end(), next.row(t).begin());
      }
    } else {
      MatrixF normed(n, x.cols());
      for (std::size_t t = 0; t < n; ++t) {
        const auto r = layer_norm<float>(x.row(t), block.norm1_gain, block.norm1_bias);
        std::copy(r.begin(), r.end(), normed.row(t).begin());
      }
      const MatrixF y = attend(normed, block.attention);
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<float> resid(x.cols());
        for (std::size_t j = 0; j < resid.size(); ++j) resid[j] = x(t, j) + y(t, j);
        const auto h = layer_norm<float>(std::span<const float>(resid), block.norm2_gain,
                                         block.norm2_bias);
        auto up = matvec<float, float, float>(layer.mlp_up, std::span<const float>(h));
        for (auto& u : up) u = silu(u);
        const auto down = matvec<float, float, float>(layer.mlp_down, std::span<const float>(up));
        for (std::size_t j = 0; j < resid.size(); ++j) next(t, j) = resid[j] + down[j];
      }
    }
    if (!all_finite(next)) throw ForwardError(li, "non-finite activations");
    x = std::move(next);
    if (keep_hidden) out.hidden_states.push_back(x);
  }
  out.logits = matvec<float, float, float>(unembed_, x.row(n - 1));
  if (!std::all_of(out.logits.begin(), out.logits.end(), [](float v) { return std::isfinite(v); })) {
    throw ForwardError(config_.layer_count, "non-finite logits");
  }
  return out;
}

ForwardOutput Model::forward_continuous(const StepwiseSentence& sentence, bool keep_hidden) const {
  if (sentence.dim() != static_cast<std::size_t>(config_.d_model)) {
    throw std::invalid_argument("sentence dimension " + std::to_string(sentence.dim()) +
                                " does not match d_model " + std::to_string(config_.d_model));
  }
  const auto durations = sentence.durations();
  const auto pos = positions(sentence);
  const auto rotary = config_.rotary();
  const auto mask = make_duration_mask(durations, config_.bias_mode);
  return run_layers(
      sentence_matrix(sentence),
      [&](const MatrixF& h, const AttentionParams& p) {
        return apply_masked_attention<float>(h, pos, p, rotary, mask, config_.bias_mode);
      },
      keep_hidden);
}

ForwardOutput Model::forward_discrete(const MatrixF& embeddings) const {
  if (embeddings.rows() == 0 || embeddings.cols() != static_cast<std::size_t>(config_.d_model)) {
    throw std::invalid_argument("forward_discrete: embeddings must be T x d_model with T >= 1");
  }
  const auto rotary = config_.rotary();
  return run_layers(
      embeddings,
      [&](const MatrixF& h, const AttentionParams& p) {
        return discrete_causal_attention<float>(h, p, rotary);
      },
      false);
}

Model init_random(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, kInitStddev);
  TensorArchive archive;
  for (const auto& spec : expected_tensors(config)) {
    Tensor t{spec.shape, {}};
    t.values.resize(t.element_count());
    switch (spec.init) {
      case TensorSpec::Init::normal:
        for (auto& v : t.values) v = normal(rng);
        break;
      case TensorSpec::Init::ones:
        std::fill(t.values.begin(), t.values.end(), 1.0f);
        break;
      case TensorSpec::Init::zeros:
        break;
    }
    archive.put(spec.name, std::move(t));
  }
  return Model{config, std::move(archive)};
}

}  // namespace cct
