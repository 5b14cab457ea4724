// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rebalance/analysis.hpp"
#include "rebalance/budget.hpp"
#include "rebalance/checkpoint.hpp"
#include "rebalance/model.hpp"
#include "rebalance/pretrain.hpp"
#include "rebalance/tokenizer.hpp"

namespace py = pybind11;
using namespace rebalance;

PYBIND11_MODULE(_core, m) {
  m.doc() = "encoder laboratory with decoupled input/output embeddings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("input_dim", &ModelConfig::input_dim)
      .def_readwrite("output_dim", &ModelConfig::output_dim)
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("layers", &ModelConfig::layers)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("head_dim", &ModelConfig::head_dim)
      .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
      .def_readwrite("max_positions", &ModelConfig::max_positions)
      .def_readwrite("type_vocab", &ModelConfig::type_vocab)
      .def_readwrite("coupled", &ModelConfig::coupled)
      .def_readwrite("layernorm_eps", &ModelConfig::layernorm_eps)
      .def("validate", &ModelConfig::validate_and_fill);

  m.def("count_params", [](ModelConfig c) {
    c.validate_and_fill();
    const ParamBudget b = count_params(c);
    py::dict d;
    d["pretrain"] = b.pretrain_count;
    d["finetune"] = b.finetune_count;
    d["embedding"] = b.embedding_params;
    d["embedding_fraction"] = b.embedding_fraction;
    return d;
  });
  m.def("per_layer_params", [](ModelConfig c) {
    c.validate_and_fill();
    return per_layer_params(c);
  });

  py::class_<Vocab>(m, "Vocab")
      .def_static("load", &Vocab::load)
      .def_static("from_pieces", &Vocab::from_pieces)
      .def("__len__", &Vocab::size)
      .def("piece_id", &Vocab::piece_id)
      .def("piece", &Vocab::piece);

  m.def("segment", &segment);
  m.def("encode_pair",
        [](const std::string& a, const std::optional<std::string>& b,
           const Vocab& v, int64_t max_len) {
          const Encoding e = encode_pair(a, b, v, max_len);
          std::vector<bool> special(e.special_mask.begin(),
                                    e.special_mask.end());
          return py::make_tuple(e.ids, e.type_ids, special);
        },
        py::arg("a"), py::arg("b"), py::arg("vocab"), py::arg("max_len"));

  py::class_<Model>(m, "Model")
      .def_static("build", &Model::build)
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("has_output_side", &Model::has_output_side)
      .def("param_count", &Model::param_count)
      .def("param_names",
           [](const Model& mm) {
             std::vector<std::string> names;
             for (const auto& [n, t] : mm.params()) names.push_back(n);
             return names;
           })
      .def("param",
           [](const Model& mm, const std::string& name) {
             const TensorPtr t = mm.param(name);
             std::vector<double> data(t->data.begin(), t->data.end());
             return py::make_tuple(t->shape, data);
           })
      .def("to_finetune", &Model::to_finetune)
      .def("truncate_layers", &Model::truncate_layers, py::arg("keep"),
           py::arg("keep_output_side") = true)
      .def("save", &save_checkpoint)
      .def_static("load", &load_checkpoint);

  m.def("smooth_distribution", &smooth_distribution);
  m.def("spearman", &spearman);
  m.def("nn_translation", [](const std::vector<std::vector<double>>& src,
                             const std::vector<std::vector<double>>& tgt) {
    auto conv = [](const std::vector<std::vector<double>>& x) {
      std::vector<std::vector<real>> out;
      for (const auto& row : x) out.emplace_back(row.begin(), row.end());
      return out;
    };
    return nn_translation(conv(src), conv(tgt));
  });
  m.def("export_embeddings",
        [](const Model& model, const std::string& side,
           const std::string& path) {
          export_embeddings(model,
                            side == "output" ? EmbeddingSide::output
                                             : EmbeddingSide::input,
                            path);
        });
}
