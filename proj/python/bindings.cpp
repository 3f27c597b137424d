#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "vixen/bundle.hpp"
#include "vixen/dataset.hpp"
#include "vixen/embedding.hpp"
#include "vixen/error.hpp"
#include "vixen/evaluate.hpp"
#include "vixen/metrics.hpp"
#include "vixen/synth.hpp"
#include "vixen/trainer.hpp"

namespace py = pybind11;
using json = nlohmann::ordered_json;
using namespace vixen;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

Image to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an (H, W, 3) array");
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + img.pixels.size(), img.pixels.begin());
  validate(img);
  return img;
}

Array image_array(const Image& img) {
  Array out({img.height, img.width, std::size_t{3}});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::object to_python(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_python(const py::handle& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

std::vector<EvalPair> make_pairs(const std::vector<std::string>& candidates,
                                 const std::vector<std::vector<std::string>>& references,
                                 const std::optional<std::vector<double>>& scores = std::nullopt) {
  if (candidates.size() != references.size()) {
    throw ConfigError({"got " + std::to_string(candidates.size()) + " candidates but " +
                       std::to_string(references.size()) + " reference lists"});
  }
  if (scores && scores->size() != candidates.size()) throw ConfigError({"scores must have one entry per candidate"});
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    EvalPair p{std::to_string(i), candidates[i], references[i], std::nullopt};
    if (scores) p.score = (*scores)[i];
    out.push_back(std::move(p));
  }
  return out;
}

// Records cross the boundary as dicts and go through the manifest parser,
// so Python callers get the same validation as files do.
std::vector<ImagePairRecord> records_from(const py::list& records) {
  std::string text;
  for (const auto& r : records) text += from_python(r).dump() + "\n";
  return parse_manifest(text, {false, {}});
}

py::list records_to(const std::vector<ImagePairRecord>& records) {
  py::list out;
  for (const auto& r : records) out.append(to_python(record_to_json(r)));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the vixen image-difference captioner";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<DimensionError> dimension_error(m, "DimensionError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const DimensionError& e) {
      py::set_error(dimension_error, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  // metrics
  m.def("metric_tokens", [](const std::string& text) { return metric_tokens(text); }, py::arg("text"));
  m.def("porter_stem", [](const std::string& word) { return porter_stem(word); }, py::arg("word"));
  m.def(
      "bleu4",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r, bool smoothed) {
        const auto pairs = make_pairs(c, r);
        return smoothed ? bleu4_smoothed_sentence(pairs) : bleu4(pairs);
      },
      py::arg("candidates"), py::arg("references"), py::arg("smoothed") = false);
  m.def(
      "rouge_l", [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) { return rouge_l(make_pairs(c, r)); },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "meteor_lite",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) { return meteor_lite(make_pairs(c, r)); },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "cider_d", [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) { return cider_d(make_pairs(c, r)); },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "evaluate",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r,
         const std::optional<std::vector<double>>& scores, const std::vector<double>& thresholds, bool smoothed) {
        EvaluateOptions o;
        o.thresholds = scores ? thresholds : std::vector<double>{};
        o.smoothed_bleu = smoothed;
        return to_python(evaluate_corpus(make_pairs(c, r, scores), o).to_json());
      },
      py::arg("candidates"), py::arg("references"), py::arg("scores") = py::none(),
      py::arg("thresholds") = std::vector<double>{3.0, 4.0, 5.0}, py::arg("smoothed_bleu") = false);
  m.def(
      "semantic_similarity",
      [](const std::string& a, const std::string& b, std::size_t dimension) {
        return semantic_similarity(a, b, HashedBowEmbedder(dimension));
      },
      py::arg("a"), py::arg("b"), py::arg("dimension") = 256);
  m.def(
      "embed",
      [](const std::string& text, std::size_t dimension) {
        const auto v = HashedBowEmbedder(dimension).embed(text);
        return to_array(Matrix(1, v.size(), v)).attr("reshape")(-1);
      },
      py::arg("text"), py::arg("dimension") = 256);

  // fusion
  m.def(
      "fuse",
      [](const Array& p, const Array& q, const std::string& strategy) {
        return to_array(fuse(to_matrix(p), to_matrix(q), parse_fusion(strategy)));
      },
      py::arg("first"), py::arg("second"), py::arg("strategy"));
  m.def(
      "fused_length", [](std::size_t k, const std::string& strategy) { return fused_length(k, parse_fusion(strategy)); },
      py::arg("k"), py::arg("strategy"));
  m.def(
      "project",
      [](const Array& features, const Array& weight, const std::vector<double>& bias) {
        ProjectionLayer layer;
        layer.weight = to_matrix(weight);
        layer.bias = bias;
        if (layer.bias.size() != layer.weight.rows()) throw DimensionError("bias length must equal weight rows");
        return to_array(project(to_matrix(features), layer));
      },
      py::arg("features"), py::arg("weight"), py::arg("bias"));

  // dataset
  m.def(
      "parse_manifest",
      [](const std::string& text, bool check_images, const std::string& base_dir) {
        return records_to(parse_manifest(text, {check_images, base_dir}));
      },
      py::arg("text"), py::arg("check_images") = false, py::arg("base_dir") = "");
  m.def(
      "build_fewshot_prompt", [](const py::dict& record) { return build_fewshot_prompt(records_from(py::list(py::make_tuple(record)))[0]); },
      py::arg("record"));
  m.def(
      "score_stats",
      [](const py::list& records) {
        const ScoreHistogram h = score_stats(records_from(records));
        return py::dict(py::arg("counts") = std::vector<std::size_t>(h.counts.begin(), h.counts.end()),
                        py::arg("percent") = std::vector<double>(h.percent.begin(), h.percent.end()),
                        py::arg("scored") = h.scored, py::arg("unscored") = h.unscored);
      },
      py::arg("records"));
  m.def(
      "filter_min_score",
      [](const py::list& records, double min_score) { return records_to(filter_min_score(records_from(records), min_score)); },
      py::arg("records"), py::arg("min_score"));
  m.def(
      "synthesize_pairs",
      [](std::size_t n, std::size_t size, std::uint64_t seed) {
        py::list out;
        for (const auto& s : synthesize_pairs(n, size, seed)) {
          out.append(py::dict(py::arg("id") = s.id, py::arg("source") = image_array(s.source),
                              py::arg("edited") = image_array(s.edited), py::arg("caption_source") = s.caption_source,
                              py::arg("caption_edited") = s.caption_edited, py::arg("instruction") = s.instruction,
                              py::arg("summary") = s.summary));
        }
        return out;
      },
      py::arg("n"), py::arg("size") = 32, py::arg("seed") = 0);

  // training and captioning on synthetic data
  m.def(
      "train_synthetic",
      [](const std::string& out_dir, std::size_t n, std::size_t size, const std::vector<std::size_t>& epochs,
         const std::vector<double>& pd, double lr, std::size_t micro_batch, std::size_t accumulation,
         std::size_t pretrain_steps, const std::string& fusion, std::uint64_t seed) {
        if (epochs.size() != pd.size()) throw ConfigError({"epochs and pd need one entry per phase"});
        TrainConfig c;
        c.phases.clear();
        for (std::size_t i = 0; i < epochs.size(); ++i) c.phases.push_back({epochs[i], pd[i]});
        c.optimizer.lr = lr;
        c.micro_batch = micro_batch;
        c.accumulation_steps = accumulation;
        c.seed = seed;
        std::vector<PairExample> data;
        std::vector<std::string> corpus;
        for (auto& s : synthesize_pairs(n, size, seed)) {
          corpus.push_back(s.summary);
          data.push_back({s.id, std::move(s.source), std::move(s.edited), s.summary});
        }
        for (const auto& p : c.no_difference_pool) corpus.push_back(p);
        ToyBundleOptions bo;
        bo.pretrain_steps = pretrain_steps;
        bo.fusion = parse_fusion(fusion);
        bo.seed = seed;
        ModelBundle bundle = make_toy_bundle(corpus, size, bo);
        RunResult r;
        {
          py::gil_scoped_release release;
          Trainer t(bundle, c, data);
          r = t.run({out_dir});
        }
        save_bundle(std::filesystem::path(out_dir) / "bundle", bundle);
        py::list curve;
        for (const auto& row : r.curve) curve.append(row.mean_loss);
        return py::dict(py::arg("loss_curve") = curve, py::arg("manifest") = r.manifest.string(),
                        py::arg("bundle") = (std::filesystem::path(out_dir) / "bundle").string());
      },
      py::arg("out_dir"), py::arg("n") = 8, py::arg("size") = 32, py::arg("epochs") = std::vector<std::size_t>{2, 2},
      py::arg("pd") = std::vector<double>{0.0, 0.5}, py::arg("lr") = 1e-2, py::arg("micro_batch") = 8,
      py::arg("accumulation") = 1, py::arg("pretrain_steps") = 300, py::arg("fusion") = "concat", py::arg("seed") = 0);
  m.def(
      "caption",
      [](const std::string& bundle_dir, const Array& source, const Array& edited, std::size_t max_len) {
        const ModelBundle bundle = load_bundle(bundle_dir);
        GenerateOptions g;
        g.max_len = max_len;
        return caption_pair(bundle, to_image(source), to_image(edited), g).text;
      },
      py::arg("bundle_dir"), py::arg("source"), py::arg("edited"), py::arg("max_len") = 32);
}
