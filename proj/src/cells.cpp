#include "nestlm/cells.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace nestlm::cells {

using json = nlohmann::json;

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::Srn: return "srn";
    case Arch::Gru: return "gru";
    case Arch::Lstm: return "lstm";
    case Arch::OnLstm: return "onlstm";
    case Arch::StackRnn: return "stackrnn";
    case Arch::StackLstm: return "stacklstm";
  }
  return "?";
}

Arch arch_from(const std::string& name) {
  for (Arch a : {Arch::Srn, Arch::Gru, Arch::Lstm, Arch::OnLstm, Arch::StackRnn, Arch::StackLstm})
    if (arch_name(a) == name) return a;
  throw ConfigError("unknown architecture '" + name + "'");
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (embedding < 1) throw ConfigError("embedding must be >= 1");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0,1)");
  if (vocab < 2) throw ConfigError("vocab must be >= 2");
  if (arch == Arch::OnLstm) {
    if (chunk < 1 || hidden % chunk != 0)
      throw ConfigError("onlstm requires hidden divisible by chunk");
  }
  if (has_stack()) {
    if (n_stacks < 1) throw ConfigError("n_stacks must be >= 1");
    if (stack_depth < 2) throw ConfigError("stack_depth must be >= 2");
    if (readout_k < 1 || readout_k > stack_depth)
      throw ConfigError("readout_k must lie in 1..stack_depth");
  }
}

std::string ModelConfig::name() const {
  std::ostringstream os;
  os << arch_name(arch) << "_l" << layers << "_h" << hidden << "_e" << embedding << "_d"
     << dropout;
  if (arch == Arch::OnLstm) os << "_c" << chunk;
  if (has_stack()) os << "_k" << stack_depth << (stack_noop ? "_noop" : "");
  return os.str();
}

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"arch", arch_name(c.arch)},
              {"layers", c.layers},
              {"hidden", c.hidden},
              {"embedding", c.embedding},
              {"dropout", c.dropout},
              {"chunk", c.chunk},
              {"n_stacks", c.n_stacks},
              {"stack_depth", c.stack_depth},
              {"readout_k", c.readout_k},
              {"stack_noop", c.stack_noop},
              {"vocab", c.vocab}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.arch = arch_from(j.at("arch"));
  c.layers = j.at("layers");
  c.hidden = j.at("hidden");
  c.embedding = j.at("embedding");
  c.dropout = j.at("dropout");
  c.chunk = j.at("chunk");
  c.n_stacks = j.at("n_stacks");
  c.stack_depth = j.at("stack_depth");
  c.readout_k = j.at("readout_k");
  c.stack_noop = j.at("stack_noop");
  c.vocab = j.at("vocab");
  return c;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  json j;
  j["version"] = version;
  j["config"] = config_to_json(config);
  j["vocab_hash"] = vocab_hash;
  j["provenance"] = json{{"dataset", prov.dataset},
                         {"seed", prov.seed},
                         {"epoch", prov.epoch},
                         {"valid_ppl", prov.valid_ppl},
                         {"extra", prov.extra}};
  json jt = json::object();
  for (const auto& [name, t] : tensors) {
    json data = json::array();
    for (Eigen::Index i = 0; i < t.size(); ++i) data.push_back(t.data()[i]);
    jt[name] = json{{"shape", {t.rows(), t.cols()}}, {"data", std::move(data)}};
  }
  j["tensors"] = std::move(jt);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump() << '\n';
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  json j = json::parse(is);
  Checkpoint ck;
  ck.version = j.at("version");
  if (ck.version != 1)
    throw ConfigError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config = config_from_json(j.at("config"));
  ck.vocab_hash = j.at("vocab_hash");
  const json& p = j.at("provenance");
  ck.prov.dataset = p.at("dataset");
  ck.prov.seed = p.at("seed");
  ck.prov.epoch = p.at("epoch");
  ck.prov.valid_ppl = p.at("valid_ppl");
  if (p.contains("extra"))
    ck.prov.extra = p.at("extra").get<std::map<std::string, std::string>>();
  for (const auto& [name, jt] : j.at("tensors").items()) {
    Eigen::Index rows = jt.at("shape")[0], cols = jt.at("shape")[1];
    Mat64 t(rows, cols);
    const json& data = jt.at("data");
    if (static_cast<Eigen::Index>(data.size()) != t.size())
      throw ConfigError("checkpoint tensor '" + name + "' has wrong element count");
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = data[static_cast<size_t>(i)];
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

}  // namespace nestlm::cells
