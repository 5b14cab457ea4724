// SPDX-License-Identifier: Apache-2.0
#include "rebalance/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rebalance/budget.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace rebalance {

namespace {

constexpr const char* kMagic = "rebalance-checkpoint";
constexpr const char* kMatrixMagic = "rebalance-matrix";
constexpr const char* kPayloadMark = "%%payload%%";

std::string shape_token(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

std::vector<int64_t> parse_shape_token(const std::string& tok) {
  std::vector<int64_t> shape;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoll(part));
  return shape;
}

void write_payload(std::ofstream& out, const TensorPtr& t) {
  for (real v : t->data) {
    const float f = float(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
}

void read_payload(std::ifstream& in, const TensorPtr& t) {
  for (auto& v : t->data) {
    float f = 0;
    if (!in.read(reinterpret_cast<char*>(&f), sizeof(float))) {
      throw IoError("checkpoint: truncated payload");
    }
    v = real(f);
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out.precision(17);
  const ModelConfig& c = model.config();
  out << kMagic << " " << kCheckpointVersion << "\n";
  out << "vocab_size " << c.vocab_size << "\n";
  out << "input_dim " << c.input_dim << "\n";
  out << "output_dim " << c.output_dim << "\n";
  out << "hidden " << c.hidden << "\n";
  out << "layers " << c.layers << "\n";
  out << "heads " << c.heads << "\n";
  out << "head_dim " << c.head_dim << "\n";
  out << "ffn_dim " << c.ffn_dim << "\n";
  out << "max_positions " << c.max_positions << "\n";
  out << "type_vocab " << c.type_vocab << "\n";
  out << "coupled " << (c.coupled ? 1 : 0) << "\n";
  out << "layernorm_eps " << c.layernorm_eps << "\n";
  out << "output_side " << (model.has_output_side() ? 1 : 0) << "\n";
  out << "param_total " << model.param_count() << "\n";
  int64_t offset = 0;
  for (const auto& [name, t] : model.params()) {
    out << "tensor " << name << " " << shape_token(t->shape) << " " << offset
        << "\n";
    offset += t->size() * int64_t(sizeof(float));
  }
  out << kPayloadMark << "\n";
  for (const auto& [name, t] : model.params()) write_payload(out, t);
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint: empty file");
  {
    std::istringstream ss(line);
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != kMagic) throw ParseError("checkpoint: bad magic line");
    if (version != kCheckpointVersion) {
      throw ParseError("checkpoint: version mismatch: file has " +
                       std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
    }
  }
  ModelConfig c;
  bool output_side = true;
  int64_t declared_total = -1;
  std::vector<std::tuple<std::string, std::vector<int64_t>, int64_t>> entries;
  while (std::getline(in, line)) {
    if (line == kPayloadMark) break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "tensor") {
      std::string name, shape_tok;
      int64_t offset = 0;
      ss >> name >> shape_tok >> offset;
      entries.emplace_back(name, parse_shape_token(shape_tok), offset);
    } else {
      std::string value;
      ss >> value;
      if (key == "vocab_size") c.vocab_size = std::stoll(value);
      else if (key == "input_dim") c.input_dim = std::stoll(value);
      else if (key == "output_dim") c.output_dim = std::stoll(value);
      else if (key == "hidden") c.hidden = std::stoll(value);
      else if (key == "layers") c.layers = std::stoll(value);
      else if (key == "heads") c.heads = std::stoll(value);
      else if (key == "head_dim") c.head_dim = std::stoll(value);
      else if (key == "ffn_dim") c.ffn_dim = std::stoll(value);
      else if (key == "max_positions") c.max_positions = std::stoll(value);
      else if (key == "type_vocab") c.type_vocab = std::stoll(value);
      else if (key == "coupled") c.coupled = value == "1";
      else if (key == "layernorm_eps") c.layernorm_eps = std::stod(value);
      else if (key == "output_side") output_side = value == "1";
      else if (key == "param_total") declared_total = std::stoll(value);
      else throw ParseError("checkpoint: unknown manifest key \"" + key + "\"");
    }
  }
  if (line != kPayloadMark) throw ParseError("checkpoint: missing payload mark");
  c.validate_and_fill();

  // Offsets must be contiguous and non-overlapping.
  int64_t expect_offset = 0;
  int64_t total = 0;
  for (const auto& [name, shape, offset] : entries) {
    if (offset != expect_offset) {
      throw ParseError("checkpoint: non-contiguous offset for tensor \"" +
                       name + "\"");
    }
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    expect_offset += n * int64_t(sizeof(float));
    total += n;
  }
  if (declared_total != total) {
    throw ParseError("checkpoint: manifest total " +
                     std::to_string(declared_total) +
                     " does not match tensor entries " + std::to_string(total));
  }
  const ParamBudget b = count_params(c);
  const int64_t formula = output_side ? b.pretrain_count : b.finetune_count;
  if (total != formula) {
    throw ParseError("checkpoint: budget mismatch: manifest total " +
                     std::to_string(total) + " vs formula " +
                     std::to_string(formula));
  }

  std::vector<std::pair<std::string, TensorPtr>> params;
  for (const auto& [name, shape, offset] : entries) {
    auto t = make_tensor(shape);
    read_payload(in, t);
    params.emplace_back(name, std::move(t));
  }
  // Payload must end exactly at the declared length.
  char extra = 0;
  if (in.read(&extra, 1)) {
    throw ParseError("checkpoint: trailing bytes after payload");
  }
  return Model::from_params(c, std::move(params));
}

void save_matrix(const TensorPtr& t, const std::string& name,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("matrix: cannot write " + path);
  out << kMatrixMagic << " " << kCheckpointVersion << "\n";
  out << "tensor " << name << " " << shape_token(t->shape) << " 0\n";
  out << kPayloadMark << "\n";
  write_payload(out, t);
  if (!out) throw IoError("matrix: write failed for " + path);
}

TensorPtr load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("matrix: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("matrix: empty file");
  {
    std::istringstream ss(line);
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != kMatrixMagic || version != kCheckpointVersion) {
      throw ParseError("matrix: bad header");
    }
  }
  if (!std::getline(in, line)) throw ParseError("matrix: missing tensor line");
  std::istringstream ss(line);
  std::string key, name, shape_tok;
  int64_t offset = 0;
  ss >> key >> name >> shape_tok >> offset;
  if (key != "tensor") throw ParseError("matrix: missing tensor entry");
  if (!std::getline(in, line) || line != kPayloadMark) {
    throw ParseError("matrix: missing payload mark");
  }
  auto t = make_tensor(parse_shape_token(shape_tok));
  read_payload(in, t);
  return t;
}

}  // namespace rebalance
