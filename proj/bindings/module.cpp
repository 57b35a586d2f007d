// Python bindings for the core operations: presence sampling, synthetic
// data, losses, preference tracking, metrics, and the experiment runner.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "modbal/config.hpp"
#include "modbal/losses.hpp"
#include "modbal/metrics.hpp"
#include "modbal/net.hpp"
#include "modbal/pref.hpp"
#include "modbal/presence.hpp"
#include "modbal/synth.hpp"
#include "modbal/train.hpp"

namespace py = pybind11;
using namespace modbal;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DArray& a) {
    std::vector<int> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
    std::vector<real> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::copy(t.data(), t.data() + t.size(), a.mutable_data());
    return a;
}

LabelMap to_label(const U8Array& a) {
    LabelMap l;
    l.shape.resize(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) l.shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
    l.v.assign(a.data(), a.data() + a.size());
    return l;
}

py::array_t<uint8_t> from_label(const LabelMap& l) {
    std::vector<py::ssize_t> shape(l.shape.begin(), l.shape.end());
    py::array_t<uint8_t> a(shape);
    std::copy(l.v.begin(), l.v.end(), a.mutable_data());
    return a;
}

std::vector<Tensor> to_tensors(const std::vector<DArray>& v) {
    std::vector<Tensor> out;
    out.reserve(v.size());
    for (const auto& a : v) out.push_back(to_tensor(a));
    return out;
}

SimilarityField to_field(const py::dict& d, const std::vector<int>& ref_shape) {
    SimilarityField f;
    std::vector<std::pair<int, DArray>> items;
    for (auto item : d)
        items.emplace_back(py::cast<int>(item.first), py::cast<DArray>(item.second));
    std::sort(items.begin(), items.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    (void)ref_shape;
    for (auto& [k, a] : items) {
        f.classes.push_back(k);
        if (f.pixels == 0) f.pixels = static_cast<size_t>(a.size());
        if (static_cast<size_t>(a.size()) != f.pixels)
            throw std::invalid_argument("field arrays disagree on pixel count");
        f.values.insert(f.values.end(), a.data(), a.data() + a.size());
    }
    return f;
}

py::dict field_to_dict(const SimilarityField& f, const std::vector<int>& spatial) {
    py::dict d;
    std::vector<py::ssize_t> shape(spatial.begin(), spatial.end());
    for (size_t ci = 0; ci < f.classes.size(); ++ci) {
        py::array_t<double> a(shape);
        std::copy(f.values.begin() + static_cast<long>(ci * f.pixels),
                  f.values.begin() + static_cast<long>((ci + 1) * f.pixels), a.mutable_data());
        d[py::int_(f.classes[ci])] = a;
    }
    return d;
}

PresenceMatrix to_presence(const U8Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("presence matrix must be 2-D");
    PresenceMatrix c;
    c.n_samples = static_cast<int>(a.shape(0));
    c.n_modalities = static_cast<int>(a.shape(1));
    c.entries.assign(a.data(), a.data() + a.size());
    return c;
}

DatasetSpec spec_from_kwargs(int samples, int modalities, int classes, std::vector<int> shape,
                             double noise, std::vector<std::vector<double>> intensity,
                             double fg_lo, double fg_hi, double nest_ratio, uint64_t seed) {
    DatasetSpec s;
    s.n_samples = samples;
    s.n_modalities = modalities;
    s.n_classes = classes;
    s.shape = std::move(shape);
    s.noise = noise;
    s.intensity = std::move(intensity);
    s.fg_frac_lo = fg_lo;
    s.fg_frac_hi = fg_hi;
    s.nest_ratio = nest_ratio;
    s.seed = seed;
    return s;
}

py::dict sample_to_dict(const MultiModalSample& s) {
    py::dict d;
    py::list imgs;
    for (const auto& img : s.images) {
        if (img.empty()) imgs.append(py::none());
        else imgs.append(from_tensor(img));
    }
    d["images"] = imgs;
    d["label"] = from_label(s.label);
    py::array_t<uint8_t> row(std::vector<py::ssize_t>{static_cast<py::ssize_t>(s.presence_row.size())});
    std::copy(s.presence_row.begin(), s.presence_row.end(), row.mutable_data());
    d["presence"] = row;
    return d;
}

}  // namespace

PYBIND11_MODULE(_modbal, m) {
    m.doc() = "core operations of the modality-balance segmentation toolkit";

    // presence
    m.def(
        "sample_presence",
        [](const std::vector<double>& targets, int n, uint64_t seed) {
            MissingRateVector t{targets};
            const PresenceMatrix c = sample_presence(t, n, seed);
            py::array_t<uint8_t> a({static_cast<py::ssize_t>(c.n_samples),
                                    static_cast<py::ssize_t>(c.n_modalities)});
            std::copy(c.entries.begin(), c.entries.end(), a.mutable_data());
            return a;
        },
        py::arg("targets"), py::arg("n"), py::arg("seed") = 0);
    m.def("missing_rates", [](const U8Array& c) { return missing_rates(to_presence(c)).rates; });
    m.def("available_modalities", [](const U8Array& c, int n) {
        const auto s = available_modalities(to_presence(c), n);
        return std::vector<int>(s.begin(), s.end());
    });

    // synthetic data
    m.def(
        "generate_dataset",
        [](int samples, int modalities, int classes, std::vector<int> shape, double noise,
           std::vector<std::vector<double>> intensity, double fg_lo, double fg_hi,
           double nest_ratio, uint64_t seed) {
            const auto data = generate_dataset(spec_from_kwargs(
                samples, modalities, classes, std::move(shape), noise, std::move(intensity),
                fg_lo, fg_hi, nest_ratio, seed));
            py::list out;
            for (const auto& s : data) out.append(sample_to_dict(s));
            return out;
        },
        py::arg("samples"), py::arg("modalities") = 3, py::arg("classes") = 3,
        py::arg("shape") = std::vector<int>{64, 64}, py::arg("noise") = 0.1,
        py::arg("intensity") = std::vector<std::vector<double>>{}, py::arg("fg_lo") = 0.08,
        py::arg("fg_hi") = 0.18, py::arg("nest_ratio") = 0.35, py::arg("seed") = 0);
    m.def("default_intensity_profile", &default_intensity_profile, py::arg("modalities"),
          py::arg("classes"));

    // losses
    m.def(
        "dice_ce",
        [](const DArray& logits, const U8Array& label, bool with_grad) -> py::object {
            const Tensor t = to_tensor(logits);
            const LabelMap y = to_label(label);
            if (!with_grad) return py::float_(dice_plus_weighted_ce(t, y));
            Tensor g(t.shape());
            const real v = dice_plus_weighted_ce(t, y, &g);
            return py::make_tuple(v, from_tensor(g));
        },
        py::arg("logits"), py::arg("label"), py::arg("with_grad") = false);
    m.def(
        "seg_loss",
        [](const std::vector<DArray>& levels, const U8Array& label, const std::string& mode) {
            return seg_loss(to_tensors(levels), to_label(label), upsample_from_string(mode));
        },
        py::arg("levels"), py::arg("label"), py::arg("mode") = "nearest");
    m.def(
        "pixel_distill",
        [](const std::vector<DArray>& uni, const std::vector<DArray>& fused, double tau,
           bool with_grad) -> py::object {
            const auto u = to_tensors(uni), f = to_tensors(fused);
            if (!with_grad) return py::float_(pixel_distill(u, f, tau));
            std::vector<Tensor> g;
            const real v = pixel_distill(u, f, tau, &g);
            py::list gl;
            for (const auto& t : g) gl.append(from_tensor(t));
            return py::make_tuple(v, gl);
        },
        py::arg("uni"), py::arg("fused"), py::arg("tau") = 4.0, py::arg("with_grad") = false);
    m.def("prototypes", [](const DArray& feats, const U8Array& label) {
        const auto p = compute_prototypes(to_tensor(feats), to_label(label));
        py::dict d;
        for (size_t i = 0; i < p.classes.size(); ++i) {
            py::array_t<double> v(std::vector<py::ssize_t>{static_cast<py::ssize_t>(p.vectors[i].size())});
            std::copy(p.vectors[i].begin(), p.vectors[i].end(), v.mutable_data());
            d[py::int_(p.classes[i])] = v;
        }
        return d;
    });
    m.def("similarity_field", [](const DArray& feats, const U8Array& label) {
        const Tensor t = to_tensor(feats);
        const LabelMap y = to_label(label);
        const auto f = similarity_field(t, compute_prototypes(t, y));
        return field_to_dict(f, y.shape);
    });
    m.def("knowledge_gap", [](const py::dict& a, const py::dict& b) {
        return knowledge_gap(to_field(a, {}), to_field(b, {}));
    });
    m.def("proto_distill", [](const py::dict& a, const py::dict& b) {
        return proto_distill(to_field(a, {}), to_field(b, {}));
    });
    m.def(
        "proto_distill_grad",
        [](const DArray& feats, const U8Array& label, const py::dict& teacher) {
            const Tensor t = to_tensor(feats);
            Tensor g(t.shape());
            const real v = proto_distill(t, to_label(label), to_field(teacher, {}), &g);
            return py::make_tuple(v, from_tensor(g));
        },
        py::arg("features"), py::arg("label"), py::arg("teacher_field"));

    // preference
    py::class_<SamplePreference>(m, "SamplePreference")
        .def_readonly("d", &SamplePreference::d)
        .def_readonly("d_bar", &SamplePreference::d_bar)
        .def_readonly("rp", &SamplePreference::rp)
        .def_readonly("delta", &SamplePreference::delta);
    m.def(
        "relative_preference",
        [](const std::map<int, double>& d, const std::vector<int>& available, int modalities) {
            return relative_preference(d, std::set<int>(available.begin(), available.end()),
                                       modalities);
        },
        py::arg("d"), py::arg("available"), py::arg("modalities"));
    m.def("task_mask", &task_mask);
    py::class_<PreferenceState>(m, "PreferenceState")
        .def(py::init([](const std::vector<double>& mr, double gamma) {
                 return PreferenceState::init(MissingRateVector{mr}, gamma);
             }),
             py::arg("missing_rates"), py::arg("gamma") = 0.01)
        .def_readonly("beta", &PreferenceState::beta)
        .def_readonly("epoch_index", &PreferenceState::epoch_index)
        .def_readwrite("beta_floor", &PreferenceState::beta_floor)
        .def("accumulate", &PreferenceState::accumulate)
        .def("epoch_mean_rp", &PreferenceState::epoch_mean_rp)
        .def("update_beta", &PreferenceState::update_beta, py::arg("apply_update") = true);
    m.def("total_loss", &total_loss, py::arg("seg"), py::arg("pixel_terms"),
          py::arg("proto_terms"), py::arg("pref"), py::arg("state"), py::arg("lambda1"),
          py::arg("lambda2"));

    // metrics
    m.def("dice_score", [](const U8Array& a, const U8Array& b) {
        return dice_score(to_label(a), to_label(b));
    });
    m.def(
        "hausdorff",
        [](const U8Array& a, const U8Array& b, const std::string& variant,
           const std::vector<double>& spacing) -> py::object {
            const HdVariant v = variant == "max" ? HdVariant::Max : HdVariant::Percentile95;
            const auto r = hausdorff(to_label(a), to_label(b), v, spacing);
            if (!r) return py::none();
            return py::float_(*r);
        },
        py::arg("pred"), py::arg("truth"), py::arg("variant") = "hd95",
        py::arg("spacing") = std::vector<double>{});

    // misc operations
    m.def(
        "upsample",
        [](const DArray& x, int factor, const std::string& mode) {
            return from_tensor(upsample_logits(to_tensor(x), factor, upsample_from_string(mode)));
        },
        py::arg("x"), py::arg("factor"), py::arg("mode") = "nearest");
    m.def("poly_lr", &poly_lr, py::arg("step"), py::arg("total_steps"), py::arg("lr0"),
          py::arg("p") = 0.9);

    // experiment runner
    m.def(
        "run_experiment",
        [](const std::string& config_path, const std::string& out_dir, py::object seed) {
            ExperimentConfig cfg = load_config(config_path);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (!seed.is_none()) cfg.seed = py::cast<uint64_t>(seed);
            const RunArtifacts art = run_experiment(cfg);
            py::dict d;
            d["checkpoint"] = art.checkpoint;
            d["rp_log"] = art.rp_log;
            d["report_csv"] = art.report_csv;
            d["report_text"] = art.report_text;
            d["resolved_config"] = art.resolved_config;
            d["rp_plot"] = art.rp_plot;
            d["presence_manifest"] = art.presence_manifest;
            return d;
        },
        py::arg("config_path"), py::arg("out_dir") = "", py::arg("seed") = py::none());

    m.attr("__version__") = "0.1.0";
}
