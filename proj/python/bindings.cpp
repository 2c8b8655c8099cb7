#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "s3l/evaluation.hpp"
#include "s3l/trainer.hpp"

namespace py = pybind11;
using namespace s3l;

namespace {

py::array_t<double> vec_to_np(const std::vector<double>& v) {
  // the single-integer array_t constructor miscomputes strides; always pass a shape vector
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> mat_to_np(const std::vector<double>& v, std::int64_t rows, std::int64_t cols) {
  py::array_t<double> out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> np_to_vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

Tensor<double> np_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(a.shape(i));
  return Tensor<double>(shape, np_to_vec(a));
}

py::array_t<double> tensor_to_np(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<double> ftensor_to_np(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  double* p = out.mutable_data();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<double>(t.at(i));
  return out;
}

MelSpectrogram np_to_mel(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                         std::int64_t hop) {
  if (a.ndim() != 2) throw DimensionError("mel array must be 2-d [n_mels x frames]");
  MelSpectrogram m;
  m.n_mels = a.shape(0);
  m.frames = a.shape(1);
  m.hop = hop;
  m.values = np_to_vec(a);
  return m;
}

Waveform np_to_wave(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Waveform w;
  w.samples = np_to_vec(a);
  return w;
}

// Frozen encoder handle for feature extraction from python.
struct PyEncoder {
  Encoder<float> enc;

  static PyEncoder from_preset(const std::string& name, std::uint64_t seed) {
    return {init_encoder<float>(encoder_preset(name), Role::Student, seed)};
  }
  static PyEncoder from_checkpoint(const std::string& path) {
    return {encoder_from_checkpoint<float>(load_checkpoint(path), Role::Student)};
  }

  py::tuple encode_mel(const py::array_t<double, py::array::c_style | py::array::forcecast>& mel) {
    auto r = encode(enc, np_to_mel(mel, 160));
    py::list layers;
    for (const auto& l : r.layers) layers.append(ftensor_to_np(l));
    return py::make_tuple(ftensor_to_np(r.final), layers);
  }

  py::array_t<double> aggregated(const py::array_t<double, py::array::c_style | py::array::forcecast>& mel,
                                 const std::string& mode) {
    auto r = encode(enc, np_to_mel(mel, 160));
    auto layers = aggregation_set(enc, r, mode == "all" ? AggregateMode::All : AggregateMode::TopStage);
    return ftensor_to_np(aggregate_layers(layers, enc.agg_logits));
  }

  std::int64_t param_count() { return enc.param_count(); }
  std::int64_t downsample() const { return enc.cfg.downsample(); }
  std::string grammar() const { return enc.cfg.text; }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core operations: synthetic speech DSP, encoder forward, losses, metrics.";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<Error>(m, "S3lError");

  // ---- DSP ----
  m.def(
      "synth_utterance",
      [](std::uint64_t seed, double dmin, double dmax, int classes) {
        SynthSpec spec;
        spec.duration_min_s = dmin;
        spec.duration_max_s = dmax;
        spec.n_classes = classes;
        const Waveform w = synth_utterance(spec, seed);
        py::list labels;
        for (const auto& seg : w.labels) labels.append(py::make_tuple(seg.begin, seg.end, seg.cls));
        return py::make_tuple(vec_to_np(w.samples), labels);
      },
      py::arg("seed"), py::arg("duration_min_s") = 1.0, py::arg("duration_max_s") = 3.0,
      py::arg("classes") = 5);

  m.def(
      "synth_noise",
      [](const std::string& kind, std::int64_t length, std::uint64_t seed) {
        return vec_to_np(synth_noise(kind == "babble" ? NoiseKind::Babble : NoiseKind::White, length, seed).samples);
      },
      py::arg("kind"), py::arg("length"), py::arg("seed"));

  m.def(
      "log_mel",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
         std::int64_t n_mels, std::int64_t n_fft, std::int64_t hop, double fmin, double fmax) {
        DspConfig cfg;
        cfg.n_mels = n_mels;
        cfg.n_fft = n_fft;
        cfg.hop = hop;
        cfg.fmin = fmin;
        cfg.fmax = fmax;
        const MelSpectrogram mel = log_mel(np_to_wave(samples), cfg);
        return mat_to_np(mel.values, mel.n_mels, mel.frames);
      },
      py::arg("samples"), py::arg("n_mels") = 40, py::arg("n_fft") = 400, py::arg("hop") = 160,
      py::arg("fmin") = 20.0, py::arg("fmax") = 7600.0);

  m.def(
      "mfcc",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mel, std::int64_t n_coeff) {
        const MelSpectrogram ms = np_to_mel(mel, 160);
        return mat_to_np(mfcc(ms, n_coeff), n_coeff, ms.frames);
      },
      py::arg("mel"), py::arg("n_coeff") = 13);

  m.def("hz_to_mel", &hz_to_mel, py::arg("hz"));
  m.def("mel_to_hz", &mel_to_hz, py::arg("mel"));

  m.def(
      "mel_filterbank",
      [](std::int64_t n_mels, std::int64_t n_fft, double sr, double fmin, double fmax) {
        const MelFilterbank fb = mel_filterbank(n_mels, n_fft, sr, fmin, fmax);
        return mat_to_np(fb.weights, fb.n_mels, fb.bins);
      },
      py::arg("n_mels"), py::arg("n_fft"), py::arg("sample_rate") = 16000.0, py::arg("fmin") = 20.0,
      py::arg("fmax") = 7600.0);

  // ---- Augmentation ----
  m.def(
      "mix_noise",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& clean,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& noise, double snr_db,
         std::uint64_t seed) {
        return vec_to_np(mix_noise(np_to_wave(clean), np_to_wave(noise), snr_db, seed).samples);
      },
      py::arg("clean"), py::arg("noise"), py::arg("snr_db"), py::arg("seed") = 0);

  m.def(
      "spec_augment",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mel, int n_time_masks,
         std::int64_t max_time, int n_freq_masks, std::int64_t max_freq, double noise_std,
         std::uint64_t seed) {
        AugmentPolicy policy;
        policy.n_time_masks = n_time_masks;
        policy.max_time_mask_frames = max_time;
        policy.n_freq_masks = n_freq_masks;
        policy.max_freq_mask_bins = max_freq;
        policy.freq_mask_noise_std = noise_std;
        auto [out, record] = spec_augment(np_to_mel(mel, 160), policy, seed);
        py::dict rec;
        rec["time_masks"] = record.time_masks;
        rec["freq_masks"] = record.freq_masks;
        return py::make_tuple(mat_to_np(out.values, out.n_mels, out.frames), rec);
      },
      py::arg("mel"), py::arg("n_time_masks") = 2, py::arg("max_time_mask_frames") = 20,
      py::arg("n_freq_masks") = 2, py::arg("max_freq_mask_bins") = 8,
      py::arg("freq_mask_noise_std") = 0.1, py::arg("seed") = 0);

  m.def(
      "positional_shift",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mel,
         std::int64_t max_shift, std::uint64_t seed) {
        auto [out, p] = positional_shift(np_to_mel(mel, 160), max_shift, seed);
        return py::make_tuple(mat_to_np(out.values, out.n_mels, out.frames), p);
      },
      py::arg("mel"), py::arg("max_shift"), py::arg("seed") = 0);

  // ---- Objectives ----
  m.def(
      "contrastive_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& student,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& teacher, double tau) {
        ContrastiveBatch<double> batch{np_to_tensor(student), np_to_tensor(teacher), tau,
                                       sample_distractors(student.shape(0), {})};
        return contrastive_loss(batch).item();
      },
      py::arg("student"), py::arg("teacher"), py::arg("tau") = 0.1);

  m.def(
      "ctc_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& log_probs,
         const std::vector<int>& labels) { return ctc_loss(np_to_tensor(log_probs), labels).item(); },
      py::arg("log_probs"), py::arg("labels"));

  m.def(
      "kmeans_fit",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& feats, std::int64_t k,
         std::int64_t iters, std::uint64_t seed) {
        const KmeansModel model = kmeans_fit(np_to_tensor(feats), k, iters, seed);
        return py::make_tuple(tensor_to_np(model.centroids), model.inertia_history);
      },
      py::arg("features"), py::arg("k"), py::arg("iters") = 20, py::arg("seed") = 0);

  m.def(
      "kmeans_assign",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& feats,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& centroids) {
        KmeansModel model;
        model.centroids = np_to_tensor(centroids);
        return kmeans_assign(np_to_tensor(feats), model);
      },
      py::arg("features"), py::arg("centroids"));

  m.def(
      "mask_spans",
      [](std::int64_t frames, double start_prob, std::int64_t span, std::uint64_t seed) {
        const MaskSet m = mask_spans(frames, start_prob, span, seed);
        return m.indices();
      },
      py::arg("frames"), py::arg("start_prob"), py::arg("span"), py::arg("seed") = 0);

  // ---- Evaluation ----
  m.def(
      "levenshtein",
      [](const std::vector<int>& hyp, const std::vector<int>& ref) { return levenshtein(hyp, ref); },
      py::arg("hyp"), py::arg("ref"));

  auto to_pairs = [](const std::vector<std::pair<std::vector<int>, std::vector<int>>>& raw) {
    std::vector<EvalPair> pairs;
    for (const auto& [h, r] : raw) pairs.push_back({h, r});
    return pairs;
  };
  m.def(
      "token_error_rate",
      [to_pairs](const std::vector<std::pair<std::vector<int>, std::vector<int>>>& raw) {
        return token_error_rate(to_pairs(raw));
      },
      py::arg("pairs"));
  m.def(
      "utterance_error_rate",
      [to_pairs](const std::vector<std::pair<std::vector<int>, std::vector<int>>>& raw) {
        return utterance_error_rate(to_pairs(raw));
      },
      py::arg("pairs"));

  m.def(
      "greedy_ctc_decode",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& log_probs) {
        return greedy_ctc_decode(np_to_tensor(log_probs));
      },
      py::arg("log_probs"));

  m.def(
      "dtw_distance",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b,
         const std::string& kind) {
        return dtw_distance(np_to_tensor(a), np_to_tensor(b),
                            kind == "kl" ? AbxDistance::Kl : AbxDistance::Angular);
      },
      py::arg("a"), py::arg("b"), py::arg("kind") = "angular");

  m.def(
      "lr_at",
      [](const std::string& kind, double base_lr, std::int64_t total, std::int64_t step, double warm,
         double hold) {
        ScheduleConfig s;
        s.kind = kind == "tri_phase" ? ScheduleConfig::Kind::TriPhase : ScheduleConfig::Kind::Cosine;
        s.base_lr = base_lr;
        s.total_steps = total;
        s.warm_frac = warm;
        s.hold_frac = hold;
        return lr_at(s, step);
      },
      py::arg("kind"), py::arg("base_lr"), py::arg("total_steps"), py::arg("step"),
      py::arg("warm_frac") = 0.1, py::arg("hold_frac") = 0.8);

  m.def(
      "plan_batches",
      [](const std::vector<std::int64_t>& frames, std::int64_t budget, std::uint64_t seed) {
        const BatchPlan plan = plan_batches(frames, budget, seed);
        py::list batches;
        for (const auto& b : plan.batches) batches.append(b.utterances);
        return py::make_tuple(batches, plan.padding_waste());
      },
      py::arg("frame_counts"), py::arg("frame_budget"), py::arg("seed") = 0);

  // ---- Encoder ----
  py::class_<PyEncoder>(m, "Encoder")
      .def_static("from_preset", &PyEncoder::from_preset, py::arg("name"), py::arg("seed") = 0)
      .def_static("from_checkpoint", &PyEncoder::from_checkpoint, py::arg("path"))
      .def("encode", &PyEncoder::encode_mel, py::arg("mel"),
           "Returns (final [T_out x D], list of per-attention-layer outputs).")
      .def("aggregated", &PyEncoder::aggregated, py::arg("mel"), py::arg("mode") = "top")
      .def("param_count", &PyEncoder::param_count)
      .def("downsample", &PyEncoder::downsample)
      .def("grammar", &PyEncoder::grammar);
}
