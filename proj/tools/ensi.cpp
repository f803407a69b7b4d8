// ensi: key generation, encryption, blind evaluation and benchmarks.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ensi/ensi.hpp"

namespace fs = std::filesystem;
using namespace ensi;

namespace {

struct Globals {
  std::string config;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::string report = "table";
};

io::RunConfig load_run_config(const Globals& g) {
  io::RunConfig c = g.config.empty() ? io::RunConfig{} : io::load_config(g.config);
  if (!g.backend.empty()) c.backend = g.backend;
  if (g.seed) {
    c.seed = *g.seed;
    c.he.seed = *g.seed;
  }
  c.validate();
  return c;
}

std::string render(const Globals& g, const std::vector<StageRecord>& rs) {
  return g.report == "records" ? report_records(rs) : report_table(rs);
}

fs::path secret_path(const fs::path& dir) { return dir / "secret.key"; }
fs::path eval_path(const fs::path& dir) { return dir / "eval.key"; }
fs::path oracle_path(const fs::path& dir) { return dir / "refresh.key"; }

/// Calls fn with the client-side backend (secret key included).
template <class Fn>
void with_client(const fs::path& keys, Fn&& fn) {
  auto eval = read_file(eval_path(keys));
  if (io::key_file_kind(eval) == io::BackendKind::clear) {
    fn(io::load_clear(eval, "ENSE"));
    return;
  }
  fn(io::load_ckks_client(read_file(secret_path(keys)), eval));
}

/// Calls fn with the server-side backend: evaluation keys plus the refresh
/// oracle, no decryption.
template <class Fn>
void with_server(const fs::path& keys, const std::string& oracle, Fn&& fn) {
  auto eval = read_file(eval_path(keys));
  if (io::key_file_kind(eval) == io::BackendKind::clear) {
    fn(io::load_clear(eval, "ENSE"));
    return;
  }
  const fs::path op = oracle.empty() ? oracle_path(keys) : fs::path(oracle);
  std::vector<std::uint8_t> ob;
  if (fs::exists(op)) ob = read_file(op);
  fn(io::load_ckks_server(eval, ob));
}

/// In-process keys for bench.
template <class Fn>
void with_fresh_backend(const io::RunConfig& c, Fn&& fn) {
  if (c.backend == "clear") fn(he::ClearBackend::keygen(c.he));
  else fn(he::CkksBackend::keygen(c.he));
}

int cmd_keygen(const Globals& g, const std::string& out) {
  auto c = load_run_config(g);
  fs::create_directories(out);
  if (c.backend == "clear") {
    he::ClearBackend b(c.he);
    write_file(secret_path(out), io::key_bytes(b, true));
    write_file(eval_path(out), io::key_bytes(b, false));
    std::cout << "key_id " << std::hex << b.key_id() << std::dec << " (clear backend)\n";
    return 0;
  }
  auto b = he::CkksBackend::keygen(c.he);
  auto sk = io::secret_key_bytes(b);
  write_file(secret_path(out), sk);
  write_file(oracle_path(out), sk);
  write_file(eval_path(out), io::eval_key_bytes(b));
  std::cout << "key_id " << std::hex << b.key_id() << std::dec << "  N'=" << c.he.ring_degree
            << " L=" << c.he.max_level << " K=" << c.he.refresh_cost << "  " << c.he.security_note << '\n';
  return 0;
}

int cmd_encrypt(const std::string& keys, const std::string& in, const std::string& out) {
  auto X = io::load_csv(in);
  with_client(keys, [&](const auto& b) { write_file(out, packed_bytes(b, pack_columns(b, X))); });
  return 0;
}

int cmd_decrypt(const std::string& keys, const std::string& in, const std::string& out) {
  with_client(keys, [&](const auto& b) {
    auto Y = unpack(b, packed_from_bytes(b, read_file(in)));
    if (out.empty()) std::cout << io::to_csv(Y);
    else io::save_csv(Y, out);
  });
  return 0;
}

int cmd_infer(const Globals& g, const std::string& keys, const std::string& oracle, const std::string& weights,
              const std::string& in, const std::string& out, const std::string& kernel, bool strict,
              const std::string& report_out) {
  auto c = load_run_config(g);
  auto w = io::load_weights(weights);
  const auto k = io::parse_kernel(kernel);
  with_server(keys, oracle, [&](auto b) {
    b.set_strict_refresh(strict);
    auto x = packed_from_bytes(b, read_file(in));
    LevelTracker tr(b.counters());
    auto y = io::run_kernel(b, k, x, w, c.resolved_layer(), &tr);
    write_file(out, packed_bytes(b, y));
    const auto rep = render(g, tr.records());
    if (report_out.empty()) std::cout << rep;
    else {
      std::ofstream f(report_out);
      f << rep;
    }
  });
  return 0;
}

int cmd_bench(const Globals& g, const std::string& kernel) {
  auto c = load_run_config(g);
  with_fresh_backend(c, [&](const auto& b) {
    using B = std::decay_t<decltype(b)>;
    std::vector<StageRecord> all;
    for (std::size_t n : c.bench_sizes) {
      Xoshiro256 rng(mix64(c.seed, n));
      LevelTracker tr(b.counters());
      auto X = Matrix::random(n, n, rng);
      auto px = pack_columns(b, X);
      std::optional<PackedMatrix<B>> y;
      if (kernel == "pcmm") y = pcmm(b, px, TernaryMatrix::random(n, n, rng), &tr);
      else if (kernel == "ccmm") y = ccmm(b, px, transposed(pack_columns(b, Matrix::random(n, n, rng))), 1.0, &tr);
      else if (kernel == "attention" || kernel == "softmax") {
        AttentionConfig a = c.layer.attention;
        a.heads = 1;
        a.seq_len = n;
        y = sigmoid_attention(b, px, px, px, a, &tr);
      } else if (kernel == "rmsnorm") {
        std::vector<double> gamma(n, 1.0);
        auto Xd = Matrix::random(n, n, rng, 0.5, 1.5);
        y = rmsnorm(b, pack_columns(b, Xd), gamma, c.layer.norm, &tr);
      } else
        throw InvalidParams("bench kernel must be pcmm, ccmm, attention or rmsnorm");
      for (auto r : tr.records()) {
        r.label += " n=" + std::to_string(n);
        all.push_back(r);
      }
    }
    std::cout << render(g, all);
  });
  return 0;
}

int cmd_serve(const Globals& g, const std::string& keys, const std::string& oracle, const std::string& weights,
              const std::string& listen, const std::string& kernel, std::size_t max_requests) {
  auto c = load_run_config(g);
  auto w = io::load_weights(weights);
  const auto k = io::parse_kernel(kernel);
  with_server(keys, oracle, [&](auto b) {
    io::InferenceServer<decltype(b)> srv{b, w, c, k, true};
    auto sock = io::listen_on(io::parse_endpoint(listen));
    std::cerr << "listening on port " << io::bound_port(sock) << std::endl;
    io::serve(sock, std::cref(srv), max_requests);
  });
  return 0;
}

int cmd_client(const Globals& g, const std::string& keys, const std::string& connect, const std::string& in,
               const std::string& out) {
  auto c = load_run_config(g);
  auto X = io::load_csv(in);
  with_client(keys, [&](const auto& b) {
    std::string report;
    auto Y = io::remote_infer(b, c, io::parse_endpoint(connect), X, &report);
    if (out.empty()) std::cout << io::to_csv(Y);
    else io::save_csv(Y, out);
    std::cerr << report;
  });
  return 0;
}

int cmd_gen_weights(const Globals& g, const std::string& out, bool zeros) {
  auto c = load_run_config(g);
  Xoshiro256 rng(mix64(c.seed, 0x3e16));
  auto w = zeros ? LayerWeights::zeros(c.model.dim, c.model.ffn_dim)
                 : LayerWeights::random(rng, c.model.dim, c.model.ffn_dim);
  io::save_weights(w, out);
  return 0;
}

int cmd_gen_input(const Globals& g, const std::string& out) {
  auto c = load_run_config(g);
  Xoshiro256 rng(mix64(c.seed, 0x1257));
  io::save_csv(Matrix::random(c.model.seq_len, c.model.dim, rng), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensi: encrypted inference for ternary-weight transformer layers"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "run configuration (JSON)");
  app.add_option("--backend", g.backend, "override backend")->check(CLI::IsMember({"clear", "ckks"}));
  auto* seed_opt = app.add_option("--seed", seed, "override seed");
  app.add_option("--report", g.report, "report format")->check(CLI::IsMember({"table", "records"}));

  std::string keys = "keys", oracle, in, out, weights, kernel = "layer", listen = "127.0.0.1:7410", connect,
              report_out;
  bool no_strict = false, zeros = false;
  std::size_t max_requests = 0;

  auto* keygen = app.add_subcommand("keygen", "generate key files");
  keygen->add_option("--out", keys, "key directory");

  auto* encrypt = app.add_subcommand("encrypt", "encrypt a CSV matrix column-wise");
  encrypt->add_option("--keys", keys);
  encrypt->add_option("--in", in)->required();
  encrypt->add_option("--out", out)->required();

  auto* decrypt = app.add_subcommand("decrypt", "decrypt a packed matrix to CSV");
  decrypt->add_option("--keys", keys);
  decrypt->add_option("--in", in)->required();
  decrypt->add_option("--out", out, "CSV path (stdout if omitted)");

  auto* infer = app.add_subcommand("infer", "evaluate a kernel on an encrypted input");
  infer->add_option("--keys", keys);
  infer->add_option("--refresh-oracle", oracle, "refresh oracle key (default <keys>/refresh.key)");
  infer->add_option("--weights", weights)->required();
  infer->add_option("--in", in)->required();
  infer->add_option("--out", out)->required();
  infer->add_option("--kernel", kernel)
      ->check(CLI::IsMember({"pcmm", "ccmm", "rope", "attention", "rmsnorm", "ffn", "layer"}));
  infer->add_flag("--no-strict", no_strict, "allow refresh outside rmsnorm");
  infer->add_option("--report-out", report_out, "write the stage report here");

  auto* bench = app.add_subcommand("bench", "op counts and timings over bench_sizes");
  bench->add_option("--kernel", kernel)->check(CLI::IsMember({"pcmm", "ccmm", "attention", "softmax", "rmsnorm"}));

  auto* serve = app.add_subcommand("serve", "answer encrypted inference requests");
  serve->add_option("--keys", keys);
  serve->add_option("--refresh-oracle", oracle);
  serve->add_option("--weights", weights)->required();
  serve->add_option("--listen", listen);
  serve->add_option("--kernel", kernel)
      ->check(CLI::IsMember({"pcmm", "ccmm", "rope", "attention", "rmsnorm", "ffn", "layer"}));
  serve->add_option("--max-requests", max_requests, "exit after this many connections (0 = never)");

  auto* client = app.add_subcommand("client", "encrypt, send, receive, decrypt");
  client->add_option("--keys", keys);
  client->add_option("--connect", connect)->required();
  client->add_option("--in", in)->required();
  client->add_option("--out", out);

  auto* genw = app.add_subcommand("gen-weights", "write a random ternary layer");
  genw->add_option("--out", out)->required();
  genw->add_flag("--zeros", zeros, "all-zero weights, unit gammas");

  auto* geni = app.add_subcommand("gen-input", "write a random input matrix (CSV)");
  geni->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*keygen) return cmd_keygen(g, keys);
    if (*encrypt) return cmd_encrypt(keys, in, out);
    if (*decrypt) return cmd_decrypt(keys, in, out);
    if (*infer) return cmd_infer(g, keys, oracle, weights, in, out, kernel, !no_strict, report_out);
    if (*bench) return cmd_bench(g, kernel == "layer" ? "pcmm" : kernel);
    if (*serve) return cmd_serve(g, keys, oracle, weights, listen, kernel, max_requests);
    if (*client) return cmd_client(g, keys, connect, in, out);
    if (*genw) return cmd_gen_weights(g, out, zeros);
    if (*geni) return cmd_gen_input(g, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
