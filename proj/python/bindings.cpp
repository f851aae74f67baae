#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gaussmark/attacks.hpp"
#include "gaussmark/experiment.hpp"
#include "gaussmark/io.hpp"
#include "gaussmark/kgw.hpp"
#include "gaussmark/watermark.hpp"

namespace py = pybind11;
using namespace gaussmark;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python wrapper parses it.
json parse(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::exception& e) {
    throw FormatError(e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gaussian parameter watermarks for toy language models";
  py::register_exception<Error>(m, "GaussmarkError", PyExc_ValueError);

  py::class_<LanguageModel, std::shared_ptr<LanguageModel>>(m, "Model")
      .def_property_readonly("vocab_size", &LanguageModel::vocab_size)
      .def_property_readonly("param_dim", &LanguageModel::param_dim)
      .def_property_readonly("params", [](const LanguageModel& self) { return self.params(); })
      .def("spec_json", [](const LanguageModel& self) { return self.spec().dump(); })
      .def("next_token_dist", [](const LanguageModel& self, const Tokens& context) { return self.next_token_dist(context); })
      .def("log_prob", [](const LanguageModel& self, const Tokens& prompt, const Tokens& y) {
        return sequence_log_prob(self, prompt, y);
      })
      .def("grad_log_prob", [](const LanguageModel& self, const Tokens& prompt, const Tokens& y) {
        return self.grad_log_prob(prompt, y);
      });

  m.def("make_model", [](const std::string& spec) {
    return std::const_pointer_cast<LanguageModel>(make_model(parse(spec)));
  });

  py::class_<WatermarkKey>(m, "Key")
      .def_readonly("xi", &WatermarkKey::xi)
      .def_readonly("sigma", &WatermarkKey::sigma)
      .def_readonly("master_seed", &WatermarkKey::master_seed)
      .def_readonly("stream_id", &WatermarkKey::stream_id)
      .def_property_readonly("dim", &WatermarkKey::dim)
      .def_property_readonly("rank_reduced", [](const WatermarkKey& k) { return static_cast<bool>(k.projector); })
      .def_property_readonly("fingerprint", &io::key_fingerprint)
      .def("to_json", [](const WatermarkKey& k, bool values) { return io::key_to_json(k, values).dump(); },
           py::arg("include_values") = true);

  m.def(
      "keygen",
      [](std::size_t d, double sigma, std::uint64_t seed, std::uint64_t stream,
         std::shared_ptr<LanguageModel> model, std::size_t rank_drop) {
        return io::keygen(d, sigma, seed, stream, model.get(), rank_drop);
      },
      py::arg("d"), py::arg("sigma"), py::arg("seed") = 0, py::arg("stream") = 0, py::arg("model") = nullptr,
      py::arg("rank_drop") = 0);
  m.def(
      "key_from_json",
      [](const std::string& s, std::shared_ptr<LanguageModel> model) { return io::key_from_json(parse(s), model.get()); },
      py::arg("text"), py::arg("model") = nullptr);

  m.def(
      "generate",
      [](const LanguageModel& model, const WatermarkKey& key, const Tokens& prompt, std::size_t length,
         std::uint64_t seed, std::uint64_t stream) {
        RngStream rng(seed, stream);
        return generate(model, key, prompt, length, rng);
      },
      py::arg("model"), py::arg("key"), py::arg("prompt"), py::arg("length"), py::arg("seed") = 0,
      py::arg("stream") = 0);
  m.def(
      "sample",
      [](const LanguageModel& model, const Tokens& prompt, std::size_t length, std::uint64_t seed, std::uint64_t stream) {
        RngStream rng(seed, stream);
        return sample_sequence(model, prompt, length, rng);
      },
      py::arg("model"), py::arg("prompt"), py::arg("length"), py::arg("seed") = 0, py::arg("stream") = 0);
  m.def(
      "detect_json",
      [](const LanguageModel& model, const WatermarkKey& key, const Tokens& prompt, const Tokens& y, double alpha) {
        return io::to_json(detect(model, key, prompt, y, alpha)).dump();
      },
      py::arg("model"), py::arg("key"), py::arg("prompt"), py::arg("response"), py::arg("alpha") = 0.05);

  m.def(
      "corrupt",
      [](const Tokens& y, const std::string& kind, double fraction, int vocab, std::uint64_t seed,
         const std::string& locus) {
        RngStream rng(seed, 0);
        const AttackResult r = corrupt(y, {parse_attack_kind(kind), parse_attack_locus(locus), fraction}, vocab, rng);
        return py::make_tuple(r.tokens, r.edits, r.clamped);
      },
      py::arg("tokens"), py::arg("kind"), py::arg("fraction"), py::arg("vocab"), py::arg("seed") = 0,
      py::arg("locus") = "random");

  m.def(
      "kgw_generate",
      [](const LanguageModel& model, const Tokens& prompt, std::size_t length, double gamma, double delta,
         int context_width, std::uint64_t hash_seed, std::uint64_t seed) {
        RngStream rng(seed, 0);
        return kgw_generate(model, KgwParams{gamma, delta, context_width, hash_seed}, prompt, length, rng);
      },
      py::arg("model"), py::arg("prompt"), py::arg("length"), py::arg("gamma") = 0.25, py::arg("delta") = 1.0,
      py::arg("context_width") = 1, py::arg("hash_seed") = 0, py::arg("seed") = 0);
  m.def(
      "kgw_detect_json",
      [](const Tokens& prompt, const Tokens& y, int vocab, double gamma, int context_width, std::uint64_t hash_seed) {
        return io::to_json(kgw_z_test(prompt, y, vocab, KgwParams{gamma, 1.0, context_width, hash_seed})).dump();
      },
      py::arg("prompt"), py::arg("response"), py::arg("vocab"), py::arg("gamma") = 0.25, py::arg("context_width") = 1,
      py::arg("hash_seed") = 0);

  m.def("p_value", &p_value);
  m.def("rejection_threshold", &rejection_threshold);

  m.def("run_experiment_json", [](const std::string& config) {
    py::gil_scoped_release release;
    const auto r = experiment::run_experiment(parse(config));
    return std::make_pair(experiment::to_csv(r.rows), r.summary.dump());
  });
  m.def("verify_theory_json", [](const std::string& check, double scale, std::uint64_t seed) {
    py::gil_scoped_release release;
    return experiment::verify_theory(check, scale, seed).dump();
  });
}
