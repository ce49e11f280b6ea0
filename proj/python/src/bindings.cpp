#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "semtok/channel.hpp"
#include "semtok/commands.hpp"
#include "semtok/concealment.hpp"
#include "semtok/config.hpp"
#include "semtok/controller.hpp"
#include "semtok/framing.hpp"
#include "semtok/metrics.hpp"
#include "semtok/rvq.hpp"
#include "semtok/token_source.hpp"

namespace py = pybind11;
using namespace semtok;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using TokenArray = py::array_t<Token, py::array::c_style | py::array::forcecast>;
using LevelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

void require_2d(const py::array& a, const char* what) {
  if (a.ndim() != 2) throw py::value_error(std::string(what) + " must be a 2-d array");
}

std::vector<LatentFeature> features_from(const FloatArray& a) {
  require_2d(a, "features");
  auto v = a.unchecked<2>();
  std::vector<LatentFeature> out(v.shape(0));
  for (py::ssize_t f = 0; f < v.shape(0); ++f) {
    out[f].frame_index = static_cast<std::uint32_t>(f);
    out[f].values.assign(v.data(f, 0), v.data(f, 0) + v.shape(1));
  }
  return out;
}

FloatArray features_to(const std::vector<LatentFeature>& fs, int dim) {
  FloatArray out({static_cast<py::ssize_t>(fs.size()), static_cast<py::ssize_t>(dim)});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t f = 0; f < fs.size(); ++f)
    std::copy(fs[f].values.begin(), fs[f].values.end(), v.mutable_data(f, 0));
  return out;
}

std::vector<TokenColumn> columns_from(const TokenArray& a) {
  require_2d(a, "tokens");
  auto v = a.unchecked<2>();
  std::vector<TokenColumn> out(v.shape(0));
  for (py::ssize_t f = 0; f < v.shape(0); ++f) {
    out[f].frame_index = static_cast<std::uint32_t>(f);
    out[f].tokens.assign(v.data(f, 0), v.data(f, 0) + v.shape(1));
  }
  return out;
}

TokenArray columns_to(const std::vector<TokenColumn>& cs, int n_q) {
  TokenArray out({static_cast<py::ssize_t>(cs.size()), static_cast<py::ssize_t>(n_q)});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t f = 0; f < cs.size(); ++f)
    for (int d = 0; d < n_q; ++d) v(f, d) = cs[f].tokens[d];
  return out;
}

// Holds trained codebooks together with the codec shape they were trained for.
struct Codec {
  CodecConfig cfg;
  std::vector<Codebook> codebooks;

  TokenArray encode(const FloatArray& features) const {
    const auto fs = features_from(features);
    std::vector<TokenColumn> cs;
    cs.reserve(fs.size());
    for (const auto& z : fs) cs.push_back(rvq_encode(z, codebooks));
    return columns_to(cs, cfg.n_q);
  }

  FloatArray decode(const TokenArray& tokens, int depth_limit) const {
    const auto cs = columns_from(tokens);
    std::vector<LatentFeature> fs;
    fs.reserve(cs.size());
    for (const auto& c : cs) fs.push_back(rvq_decode(c, codebooks, depth_limit > 0 ? depth_limit : cfg.n_q));
    return features_to(fs, cfg.feature_dim);
  }
};

py::object run_command(const std::string& config_json,
                       const std::function<void(const RunConfig&, std::ostream&)>& body) {
  const RunConfig cfg = config_from_json(nlohmann::json::parse(config_json));
  cfg.validate();
  std::ostringstream out;
  {
    py::gil_scoped_release release;
    body(cfg, out);
  }
  return py::str(out.str());
}

}  // namespace

PYBIND11_MODULE(_semtok, m) {
  m.doc() = "Residual token streaming with unequal error protection and causal concealment.";

  m.attr("ERASED") = kErased;
  m.attr("PAD") = kPad;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<CodecConfig>(m, "CodecConfig")
      .def(py::init([](int n_q, int codebook_size, int feature_dim, double frame_rate_hz) {
             CodecConfig c{n_q, codebook_size, feature_dim, frame_rate_hz};
             c.validate();
             return c;
           }),
           py::arg("n_q") = 8, py::arg("codebook_size") = 2048, py::arg("feature_dim") = 16,
           py::arg("frame_rate_hz") = 12.5)
      .def_readonly("n_q", &CodecConfig::n_q)
      .def_readonly("codebook_size", &CodecConfig::codebook_size)
      .def_readonly("feature_dim", &CodecConfig::feature_dim)
      .def_readonly("frame_rate_hz", &CodecConfig::frame_rate_hz)
      .def_property_readonly("bits_per_token", &CodecConfig::bits_per_token)
      .def("__eq__", [](const CodecConfig& a, const CodecConfig& b) { return a == b; })
      .def("__repr__", [](const CodecConfig& c) {
        return "CodecConfig(n_q=" + std::to_string(c.n_q) + ", codebook_size=" +
               std::to_string(c.codebook_size) + ", feature_dim=" + std::to_string(c.feature_dim) + ")";
      });

  m.def(
      "synth_features",
      [](int n_frames, const CodecConfig& cfg, std::uint64_t seed) {
        return features_to(synth_features(n_frames, cfg, seed), cfg.feature_dim);
      },
      py::arg("n_frames"), py::arg("cfg"), py::arg("seed"));

  py::class_<Codec>(m, "Codec")
      .def_static(
          "train",
          [](const FloatArray& features, const CodecConfig& cfg, std::uint64_t seed, int max_iterations) {
            const auto fs = features_from(features);
            TrainOptions opts;
            opts.max_iterations = max_iterations;
            Codec c{cfg, {}};
            py::gil_scoped_release release;
            c.codebooks = train_codebooks(fs, cfg, seed, opts);
            return c;
          },
          py::arg("features"), py::arg("cfg"), py::arg("seed"), py::arg("max_iterations") = 50)
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            Codec c;
            c.codebooks = load_codebooks(path, &c.cfg);
            return c;
          },
          py::arg("path"))
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    Codec c;
                    c.codebooks = parse_codebooks(
                        {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}, &c.cfg);
                    return c;
                  })
      .def("save", [](const Codec& c, const std::filesystem::path& path) { save_codebooks(path, c.cfg, c.codebooks); })
      .def("to_bytes",
           [](const Codec& c) {
             const auto b = serialize_codebooks(c.cfg, c.codebooks);
             return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
           })
      .def_readonly("cfg", &Codec::cfg)
      .def("codebook",
           [](const Codec& c, int depth) {
             if (depth < 1 || depth > static_cast<int>(c.codebooks.size()))
               throw py::index_error("depth out of range");
             const auto& cb = c.codebooks[depth - 1];
             FloatArray out({cb.size(), cb.dim()});
             std::copy(cb.data().begin(), cb.data().end(), out.mutable_data());
             return out;
           })
      .def("encode", &Codec::encode, py::arg("features"))
      .def("decode", &Codec::decode, py::arg("tokens"), py::arg("depth_limit") = 0)
      .def(
          "residual_energies",
          [](const Codec& c, const FloatArray& features) {
            const auto fs = features_from(features);
            py::array_t<double> out({static_cast<py::ssize_t>(fs.size()), static_cast<py::ssize_t>(c.cfg.n_q)});
            auto v = out.mutable_unchecked<2>();
            for (std::size_t f = 0; f < fs.size(); ++f) {
              const auto e = residual_energies(fs[f], rvq_encode(fs[f], c.codebooks), c.codebooks);
              for (std::size_t d = 0; d < e.size(); ++d) v(f, d) = e[d];
            }
            return out;
          },
          py::arg("features"));

  m.def("step", &step, py::arg("j"), py::arg("i"));
  m.def("soft_step", py::vectorize(&soft_step), py::arg("j"), py::arg("i"), py::arg("tau"));

  py::class_<Mask>(m, "Mask")
      .def_readonly("levels", &Mask::levels)
      .def_readonly("semantic", &Mask::semantic)
      .def_readonly("channel", &Mask::channel)
      .def_readonly("l_budget", &Mask::l_budget)
      .def("sum", &Mask::sum)
      .def("__eq__", [](const Mask& a, const Mask& b) { return a == b; })
      .def("__repr__", [](const Mask& mk) {
        std::string s = "Mask([";
        for (std::size_t d = 0; d < mk.levels.size(); ++d) s += (d ? ", " : "") + std::to_string(mk.levels[d]);
        return s + "])";
      });

  m.def(
      "importance_to_mask",
      [](double i_s, double i_c, int l_budget, int n_q) {
        return importance_to_mask({i_s, i_c}, l_budget, n_q);
      },
      py::arg("i_s"), py::arg("i_c"), py::arg("l_budget") = 16, py::arg("n_q") = 8);
  m.def("without_redundancy", &without_redundancy, py::arg("mask"));
  m.def(
      "fixed_mask", [](const std::vector<std::uint8_t>& levels) { return fixed_mask(levels); },
      py::arg("levels"));

  m.def(
      "uniform_loss",
      [](std::size_t n, double p, std::uint64_t seed) {
        const auto t = uniform_loss(n, p, seed);
        return py::array_t<std::uint8_t>(t.lost.size(), t.lost.data());
      },
      py::arg("n_units"), py::arg("p"), py::arg("seed"));
  m.def(
      "ge_loss",
      [](std::size_t n, double p_target, double mean_burst, std::uint64_t seed) {
        const auto t = ge_loss(n, ge_params_from_target(p_target, mean_burst), seed);
        std::vector<std::uint8_t> bad(t.state.size());
        for (std::size_t k = 0; k < bad.size(); ++k) bad[k] = t.state[k] == GEState::kBad;
        return py::make_tuple(py::array_t<std::uint8_t>(t.lost.size(), t.lost.data()),
                              py::array_t<std::uint8_t>(bad.size(), bad.data()));
      },
      py::arg("n_units"), py::arg("p_target"), py::arg("mean_burst"), py::arg("seed"));

  py::class_<FramingConfig>(m, "FramingConfig")
      .def(py::init([](int n_q, int bits_per_token, int frames_per_packet, bool interleave, int interleave_base) {
             FramingConfig c{n_q, bits_per_token, frames_per_packet, interleave, interleave_base};
             c.validate();
             return c;
           }),
           py::arg("n_q") = 8, py::arg("bits_per_token") = 11, py::arg("frames_per_packet") = 2,
           py::arg("interleave") = true, py::arg("interleave_base") = 0)
      .def_readonly("n_q", &FramingConfig::n_q)
      .def_readonly("bits_per_token", &FramingConfig::bits_per_token)
      .def_readonly("frames_per_packet", &FramingConfig::frames_per_packet)
      .def_readonly("interleave", &FramingConfig::interleave);

  // Tokens and levels are (frames, n_q); a level of 0 leaves the slot out of the packet.
  m.def(
      "packetize",
      [](const TokenArray& tokens, const LevelArray& levels, const FramingConfig& cfg) {
        require_2d(levels, "levels");
        const auto cs = columns_from(tokens);
        if (levels.shape(0) != static_cast<py::ssize_t>(cs.size()) || levels.shape(1) != cfg.n_q ||
            tokens.shape(1) != cfg.n_q)
          throw py::value_error("tokens and levels must both be (frames, n_q)");
        auto lv = levels.unchecked<2>();
        std::vector<TransmitSet> wire(cs.size());
        for (std::size_t f = 0; f < cs.size(); ++f)
          wire[f] = apply_mask(cs[f], fixed_mask(std::vector<std::uint8_t>(lv.data(f, 0), lv.data(f, 0) + cfg.n_q)));
        interleave_stream(wire, cfg);
        py::list out;
        for (const auto& p : packetize(wire, cfg)) {
          const auto b = serialize_packet(p, cfg);
          out.append(py::bytes(reinterpret_cast<const char*>(b.data()), b.size()));
        }
        return out;
      },
      py::arg("tokens"), py::arg("levels"), py::arg("cfg"));

  // None marks a lost packet. Returns (tokens, levels) with ERASED where nothing arrived.
  m.def(
      "depacketize",
      [](const std::vector<std::optional<py::bytes>>& packets, std::size_t n_frames, const FramingConfig& cfg) {
        std::vector<std::optional<std::vector<std::uint8_t>>> rx(packets.size());
        for (std::size_t k = 0; k < packets.size(); ++k)
          if (packets[k]) {
            const std::string s = *packets[k];
            rx[k].emplace(s.begin(), s.end());
          }
        const auto sets = depacketize(rx, n_frames, cfg);
        TokenArray tokens({static_cast<py::ssize_t>(n_frames), static_cast<py::ssize_t>(cfg.n_q)});
        LevelArray levels({static_cast<py::ssize_t>(n_frames), static_cast<py::ssize_t>(cfg.n_q)});
        auto tv = tokens.mutable_unchecked<2>();
        auto lv = levels.mutable_unchecked<2>();
        for (std::size_t f = 0; f < n_frames; ++f)
          for (int d = 0; d < cfg.n_q; ++d) {
            const auto& s = sets[f].slots[d];
            tv(f, d) = s.state == SlotState::kPresent ? s.token : kErased;
            lv(f, d) = s.level;
          }
        return py::make_tuple(tokens, levels);
      },
      py::arg("packets"), py::arg("n_frames"), py::arg("cfg"));

  py::class_<Predictor>(m, "Predictor").def_property_readonly("name", &Predictor::name);
  py::class_<UniformPredictor, Predictor>(m, "UniformPredictor").def(py::init<>());
  py::class_<RepeatLastPredictor, Predictor>(m, "RepeatLastPredictor").def(py::init<>());
  py::class_<CountModel, Predictor>(m, "CountModel")
      .def(py::init<int, double, int, int>(), py::arg("order") = 2, py::arg("smoothing") = 0.1,
           py::arg("n_q") = 8, py::arg("codebook_size") = 2048)
      .def(
          "train", [](CountModel& cm, const TokenArray& tokens) { cm.train(columns_from(tokens)); },
          py::arg("tokens"))
      .def_property_readonly("order", &CountModel::order)
      .def_property_readonly("context_count", &CountModel::context_count)
      .def("save", &CountModel::save, py::arg("path"))
      .def_static("load", &CountModel::load, py::arg("path"))
      .def("to_bytes",
           [](const CountModel& cm) {
             const auto b = cm.serialize();
             return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
           })
      .def_static("from_bytes", [](const py::bytes& b) {
        const std::string s = b;
        return CountModel::parse({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
      });

  m.def(
      "conceal",
      [](const Predictor& predictor, const TokenArray& received, int codebook_size, double temperature,
         std::uint64_t seed) {
        const auto cs = columns_from(received);
        const int n_q = static_cast<int>(received.shape(1));
        ConcealOptions opts{temperature, seed};
        std::vector<TokenColumn> out;
        {
          py::gil_scoped_release release;
          out = conceal_stream(predictor, cs, n_q, codebook_size, opts);
        }
        return columns_to(out, n_q);
      },
      py::arg("predictor"), py::arg("received"), py::arg("codebook_size"), py::arg("temperature") = 0.0,
      py::arg("seed") = 0);

  m.def(
      "hmm_tokens",
      [](int n_frames, int n_q, int codebook_size, std::uint64_t seed) {
        return columns_to(hmm_token_source(n_frames, n_q, codebook_size, seed), n_q);
      },
      py::arg("n_frames"), py::arg("n_q"), py::arg("codebook_size"), py::arg("seed"));

  m.def(
      "payload_bitrate",
      [](const std::vector<int>& mask_sums, const CodecConfig& cfg) { return payload_bitrate(mask_sums, cfg); },
      py::arg("mask_sums"), py::arg("cfg"));
  m.def(
      "overhead_estimate",
      [](double r_payload, double n_pkt, double r_header, double r_ctrl) {
        return overhead_estimate({r_payload, n_pkt, r_header, r_ctrl});
      },
      py::arg("r_payload"), py::arg("n_pkt"), py::arg("r_header"), py::arg("r_ctrl"));
  m.def(
      "latency_estimate",
      [](double t_context, double t_coder, double t_ra, double t_token, double expected_tokens,
         double t_transmit) {
        return latency_estimate({t_context, t_coder, t_ra, t_token, expected_tokens, t_transmit});
      },
      py::arg("t_context"), py::arg("t_coder"), py::arg("t_ra") = 0.0, py::arg("t_token") = 0.0,
      py::arg("expected_tokens") = 0.0, py::arg("t_transmit") = 0.0);

  m.def("default_config_json", [] { return config_to_json(RunConfig{}).dump(); });
  m.def("train_codec_json", [](const std::string& cfg) {
    return run_command(cfg, [](const RunConfig& c, std::ostream& o) { cmd_train_codec(c, o); });
  });
  m.def("train_predictor_json", [](const std::string& cfg) {
    return run_command(cfg, [](const RunConfig& c, std::ostream& o) { cmd_train_predictor(c, o); });
  });
  m.def(
      "simulate_json",
      [](const std::string& cfg, int jobs) {
        return run_command(cfg, [jobs](const RunConfig& c, std::ostream& o) { cmd_simulate(c, o, jobs); });
      },
      py::arg("config"), py::arg("jobs") = 1);
  m.def(
      "sweep_json",
      [](const std::string& cfg, int jobs) {
        return run_command(cfg, [jobs](const RunConfig& c, std::ostream& o) { cmd_sweep(c, o, jobs); });
      },
      py::arg("config"), py::arg("jobs") = 1);
}
