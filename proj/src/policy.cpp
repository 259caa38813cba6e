#include "sali/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sali::policy {

using nn::Mat;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

namespace {

constexpr int kKindCount = 5;
constexpr int kLocDim = 5;
constexpr double kStepScale = 0.1;

int kind_slot(memory::NodeKind k) {
  switch (k) {
    case memory::NodeKind::Visited: return 0;
    case memory::NodeKind::Current: return 1;
    case memory::NodeKind::Navigable: return 2;
    case memory::NodeKind::Imagination: return 3;
    case memory::NodeKind::Stop: return 4;
  }
  return 0;
}

int input_dim(const PolicyConfig& cfg) {
  return cfg.feature_dim + kLocDim + 1 + kKindCount;
}

// Shared multi-head attention; buckets (when given) add a learned per-bucket
// scalar to every logit before the row softmax.
Var mha(Tape& t, ParamStore& ps, const std::string& prefix, Var xq, Var xkv, int heads,
        const Eigen::MatrixXi* buckets, AttnDiag* diag) {
  int d = static_cast<int>(t.val(xq).cols());
  if (d % heads != 0) fail(ErrorKind::Shape, "model dim not divisible by heads");
  int dh = d / heads;
  Var q = nn::linear(t, xq, ps, prefix + ".q");
  // No key bias: a shared key offset cancels in the row softmax.
  Var k = nn::linear_nobias(t, xkv, ps, prefix + ".k");
  Var v = nn::linear(t, xkv, ps, prefix + ".v");
  Var bias;
  if (buckets) {
    Var table = t.param(ps, prefix + ".bias_table");
    bias = nn::gather_cells(t, table, *buckets);
  }
  std::vector<Var> ctx;
  for (int h = 0; h < heads; ++h) {
    Var qh = nn::slice_cols(t, q, h * dh, dh);
    Var kh = nn::slice_cols(t, k, h * dh, dh);
    Var vh = nn::slice_cols(t, v, h * dh, dh);
    Var logits = nn::scale(t, nn::matmul_nt(t, qh, kh), 1.0 / std::sqrt(double(dh)));
    if (buckets) logits = nn::add(t, logits, bias);
    Var p = nn::softmax_rows(t, logits);
    if (diag) diag->head_probs.push_back(t.val(p));
    ctx.push_back(nn::matmul(t, p, vh));
  }
  return nn::linear(t, nn::concat_cols(t, ctx), ps, prefix + ".o");
}

Var residual_ffn(Tape& t, ParamStore& ps, const std::string& prefix, Var x, Var mixed) {
  Var h1 = nn::layer_norm(t, nn::add(t, x, mixed), ps, prefix + ".ln1");
  Var f = nn::linear(t, nn::tanh_op(t, nn::linear(t, h1, ps, prefix + ".f1")), ps,
                     prefix + ".f2");
  return nn::layer_norm(t, nn::add(t, h1, f), ps, prefix + ".ln2");
}

Var cross_block(Tape& t, ParamStore& ps, const std::string& prefix, Var x, Var ctx,
                int heads, AttnDiag* diag) {
  Var attn = mha(t, ps, prefix + ".attn", x, ctx, heads, nullptr, diag);
  return residual_ffn(t, ps, prefix, x, attn);
}

void ensure_attn(ParamStore& ps, const std::string& prefix, int d, bool with_bias,
                 Rng& rng) {
  nn::ensure_linear(ps, prefix + ".q", d, d, rng);
  nn::ensure_linear_nobias(ps, prefix + ".k", d, d, rng);
  nn::ensure_linear(ps, prefix + ".v", d, d, rng);
  nn::ensure_linear(ps, prefix + ".o", d, d, rng);
  if (with_bias && !ps.has(prefix + ".bias_table"))
    ps.add(prefix + ".bias_table", 1, 6);  // zero: plain attention at init
}

void ensure_block(ParamStore& ps, const std::string& prefix, int d, int d_ff,
                  bool with_bias, Rng& rng) {
  ensure_attn(ps, prefix + ".attn", d, with_bias, rng);
  nn::ensure_layer_norm(ps, prefix + ".ln1", d);
  nn::ensure_linear(ps, prefix + ".f1", d, d_ff, rng);
  nn::ensure_linear(ps, prefix + ".f2", d_ff, d, rng);
  nn::ensure_layer_norm(ps, prefix + ".ln2", d);
}

}  // namespace

MemoryMode memory_mode_from_name(const std::string& name) {
  if (name == "reality") return MemoryMode::Reality;
  if (name == "imagination") return MemoryMode::Imagination;
  if (name == "hybrid" || name == "reality+imagination") return MemoryMode::Hybrid;
  fail(ErrorKind::Config, "unknown memory mode: " + name);
}

std::string memory_mode_name(MemoryMode m) {
  switch (m) {
    case MemoryMode::Reality: return "reality";
    case MemoryMode::Imagination: return "imagination";
    default: return "reality+imagination";
  }
}

void init_policy_params(ParamStore& ps, const PolicyConfig& cfg, Rng& rng) {
  if (cfg.vocab_size <= 0 || cfg.feature_dim <= 0)
    fail(ErrorKind::Config, "policy config missing vocab or feature dims");
  ps.add_uniform("policy.tok_emb", cfg.vocab_size, cfg.d_model, rng);
  ps.add_uniform("policy.pos_emb", cfg.max_tokens, cfg.d_model, rng);
  ps.add_uniform("policy.type_emb", 4, cfg.d_model, rng);
  for (int l = 0; l < cfg.instr_layers; ++l)
    ensure_block(ps, "policy.instr.l" + std::to_string(l), cfg.d_model, cfg.d_ff,
                 false, rng);
  nn::ensure_linear(ps, "policy.node_proj", input_dim(cfg), cfg.d_model, rng);
  if (cfg.separate_imagination_encoder)
    nn::ensure_linear(ps, "policy.node_proj_imag", input_dim(cfg), cfg.d_model, rng);
  for (int l = 0; l < cfg.cross_layers; ++l) {
    std::string base = "policy.cross.l" + std::to_string(l);
    ensure_block(ps, base + ".gasa", cfg.d_model, cfg.d_ff, true, rng);
    ensure_block(ps, base + ".xattn", cfg.d_model, cfg.d_ff, false, rng);
  }
  nn::ensure_linear(ps, "policy.score_r.f1", cfg.d_model, cfg.d_model, rng);
  nn::ensure_linear(ps, "policy.score_r.f2", cfg.d_model, 1, rng);
  nn::ensure_linear(ps, "policy.score_i.f1", cfg.d_model, cfg.d_model, rng);
  nn::ensure_linear(ps, "policy.score_i.f2", cfg.d_model, 1, rng);
  nn::ensure_linear(ps, "policy.fusion.f1", 2 * cfg.d_model, cfg.d_model, rng);
  nn::ensure_linear(ps, "policy.fusion.f2", cfg.d_model, 1, rng);
}

Var encode_instruction(Tape& t, ParamStore& ps, const PolicyConfig& cfg,
                       const std::vector<int>& tokens, const world::Vocab& vocab,
                       AttnDiag* diag) {
  if (tokens.empty()) fail(ErrorKind::Encoding, "empty instruction");
  if (static_cast<int>(tokens.size()) > cfg.max_tokens)
    fail(ErrorKind::Encoding, "instruction longer than max_tokens");
  std::vector<int> type_rows;
  for (int tok : tokens) {
    if (tok < 0 || tok >= cfg.vocab_size)
      fail(ErrorKind::Encoding, "token " + std::to_string(tok) + " out of vocabulary");
    type_rows.push_back(static_cast<int>(vocab.type_of(tok)));
  }
  std::vector<int> pos_rows(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) pos_rows[i] = static_cast<int>(i);

  Var tok_emb = nn::select_rows(t, t.param(ps, "policy.tok_emb"), tokens);
  Var pos_emb = nn::select_rows(t, t.param(ps, "policy.pos_emb"), pos_rows);
  Var typ_emb = nn::select_rows(t, t.param(ps, "policy.type_emb"), type_rows);
  Var x = nn::add(t, nn::add(t, tok_emb, pos_emb), typ_emb);
  for (int l = 0; l < cfg.instr_layers; ++l) {
    std::string base = "policy.instr.l" + std::to_string(l);
    Var attn = mha(t, ps, base + ".attn", x, x, cfg.heads, nullptr, diag);
    x = residual_ffn(t, ps, base, x, attn);
  }
  return x;
}

Var gasa_block(Tape& t, ParamStore& ps, const std::string& prefix, Var x, int heads,
               const Eigen::MatrixXi* buckets, AttnDiag* diag) {
  Var attn = mha(t, ps, prefix + ".attn", x, x, heads, buckets, diag);
  return residual_ffn(t, ps, prefix, x, attn);
}

MapView build_map_view(const memory::MemoryMap& map, int current_step) {
  return build_map_view(map, current_step, map.ids());
}

MapView build_map_view(const memory::MemoryMap& map, int current_step,
                       const std::vector<int>& order) {
  MapView view;
  view.order = order;
  int n = static_cast<int>(order.size());
  int fdim = map.feature_dim();
  view.inputs = Mat::Zero(n, fdim + kLocDim + 1 + kKindCount);
  for (int r = 0; r < n; ++r) {
    const memory::MemoryNode& node = map.node(order[r]);
    memory::EmbeddingInputs in = map.embedding_inputs(order[r], current_step);
    view.inputs.block(r, 0, 1, fdim) = in.feature.transpose();
    view.inputs.block(r, fdim, 1, kLocDim) = in.location_code.transpose();
    view.inputs(r, fdim + kLocDim) = kStepScale * in.step_code;
    view.inputs(r, fdim + kLocDim + 1 + kind_slot(node.kind)) = 1.0;
    if (node.kind == memory::NodeKind::Imagination) {
      view.imag_rows.push_back(r);
      view.imag_ids.push_back(order[r]);
    } else {
      view.real_rows.push_back(r);
    }
  }
  view.buckets = map.hop_buckets(order);

  // Candidates: stop first, then navigable nodes by ascending id.
  std::vector<std::pair<int, int>> nav;  // (id, row)
  int stop_row = -1;
  for (int r = 0; r < n; ++r) {
    const memory::MemoryNode& node = map.node(order[r]);
    if (node.kind == memory::NodeKind::Stop) stop_row = r;
    if (node.kind == memory::NodeKind::Navigable) nav.push_back({order[r], r});
  }
  std::sort(nav.begin(), nav.end());
  if (stop_row < 0) fail(ErrorKind::Validation, "memory map has no stop node");
  view.stop_candidate = 0;
  view.candidate_ids.push_back(memory::MemoryMap::kStopId);
  view.candidate_rows.push_back(stop_row);
  for (const auto& [id, row] : nav) {
    view.candidate_ids.push_back(id);
    view.candidate_rows.push_back(row);
  }

  // Nearest navigable node for every imagination node (ties: lowest id).
  if (!view.imag_ids.empty() && !nav.empty()) {
    for (int id : view.imag_ids) {
      const Vec3& p = map.node(id).position;
      double best = std::numeric_limits<double>::infinity();
      int best_id = -1;
      for (const auto& [nid, row] : nav) {
        double d = (map.node(nid).position - p).norm();
        if (d < best - 1e-12) {
          best = d;
          best_id = nid;
        }
      }
      int ci = -1;
      for (size_t k = 0; k < view.candidate_ids.size(); ++k)
        if (view.candidate_ids[k] == best_id) ci = static_cast<int>(k);
      view.imag_assign.push_back(ci);
    }
  }
  return view;
}

Var cross_modal_encode(Tape& t, ParamStore& ps, const PolicyConfig& cfg,
                       const MapView& view, Var instr, AttnDiag* diag) {
  if (t.val(instr).rows() == 0) fail(ErrorKind::Encoding, "empty instruction encoding");
  Var x;
  if (cfg.separate_imagination_encoder && ps.has("policy.node_proj_imag.w")) {
    Mat real_in = view.inputs;
    Mat imag_in = view.inputs;
    for (int r : view.imag_rows) real_in.row(r).setZero();
    for (int r : view.real_rows) imag_in.row(r).setZero();
    Var xr = nn::matmul(t, t.constant(real_in), t.param(ps, "policy.node_proj.w"));
    Var xi = nn::matmul(t, t.constant(imag_in), t.param(ps, "policy.node_proj_imag.w"));
    x = nn::add_rowvec(t, nn::add(t, xr, xi), t.param(ps, "policy.node_proj.b"));
  } else {
    x = nn::linear(t, t.constant(view.inputs), ps, "policy.node_proj");
  }
  for (int l = 0; l < cfg.cross_layers; ++l) {
    std::string base = "policy.cross.l" + std::to_string(l);
    x = gasa_block(t, ps, base + ".gasa", x, cfg.heads, &view.buckets, diag);
    x = cross_block(t, ps, base + ".xattn", x, instr, cfg.heads, diag);
  }
  return x;
}

DecisionVars decide(Tape& t, ParamStore& ps, const PolicyConfig& cfg,
                    const MapView& view, Var instr, MemoryMode mode,
                    double gamma_override, AttnDiag* diag) {
  DecisionVars dv;
  dv.node_vecs = cross_modal_encode(t, ps, cfg, view, instr, diag);
  int n_cand = static_cast<int>(view.candidate_ids.size());
  int n_imag = static_cast<int>(view.imag_rows.size());
  if (n_imag > 0 && n_cand <= 1 && mode != MemoryMode::Reality)
    fail(ErrorKind::Fusion, "imagination nodes present but no navigable node to fuse into");

  Var cand_vecs = nn::select_rows(t, dv.node_vecs, view.candidate_rows);
  Var h_r = nn::tanh_op(t, nn::linear(t, cand_vecs, ps, "policy.score_r.f1"));
  dv.s_r = nn::linear(t, h_r, ps, "policy.score_r.f2");

  if (n_imag > 0) {
    Var imag_vecs = nn::select_rows(t, dv.node_vecs, view.imag_rows);
    Var h_i = nn::tanh_op(t, nn::linear(t, imag_vecs, ps, "policy.score_i.f1"));
    dv.s_i = nn::linear(t, h_i, ps, "policy.score_i.f2");
  }

  // Fusion factor from mean-pooled real and imagined context vectors.
  Var pool_r = nn::mean_rows(t, nn::select_rows(t, dv.node_vecs, view.real_rows));
  Var pool_i = n_imag > 0
                   ? nn::mean_rows(t, nn::select_rows(t, dv.node_vecs, view.imag_rows))
                   : t.constant(Mat::Zero(1, cfg.d_model));
  Var g_h = nn::tanh_op(
      t, nn::linear(t, nn::concat_cols(t, {pool_r, pool_i}), ps, "policy.fusion.f1"));
  Var g_logit = nn::linear(t, g_h, ps, "policy.fusion.f2");
  dv.gamma = nn::clamp_op(t, nn::sigmoid_op(t, g_logit), 1e-12, 1.0 - 1e-12);
  if (gamma_override >= 0.0) dv.gamma = t.constant(Mat::Constant(1, 1, gamma_override));

  Var base = dv.s_r;
  if (mode == MemoryMode::Imagination) {
    // Only the stop score survives from the real stream.
    Mat mask = Mat::Zero(n_cand, 1);
    mask(view.stop_candidate, 0) = 1.0;
    base = nn::hadamard(t, dv.s_r, t.constant(mask));
  }
  if (n_imag > 0 && mode != MemoryMode::Reality) {
    Mat assign = Mat::Zero(n_cand, n_imag);
    for (int k = 0; k < n_imag; ++k) assign(view.imag_assign[k], k) = 1.0;
    Var folded = nn::scalar_mul(t, nn::matmul(t, t.constant(assign), dv.s_i), dv.gamma);
    dv.fused = nn::add(t, base, folded);
  } else {
    dv.fused = base;
  }
  return dv;
}

ScoreSet run_policy(ParamStore& ps, const PolicyConfig& cfg, const memory::MemoryMap& map,
                    int current_step, const std::vector<int>& tokens,
                    const world::Vocab& vocab, MemoryMode mode, double gamma_override) {
  Tape t;
  Var instr = encode_instruction(t, ps, cfg, tokens, vocab);
  MapView view = build_map_view(map, current_step);
  DecisionVars dv = decide(t, ps, cfg, view, instr, mode, gamma_override);
  ScoreSet out;
  for (size_t k = 0; k < view.candidate_ids.size(); ++k) {
    out.s_r[view.candidate_ids[k]] = t.val(dv.s_r)(static_cast<int>(k), 0);
    out.fused[view.candidate_ids[k]] = t.val(dv.fused)(static_cast<int>(k), 0);
  }
  for (size_t k = 0; k < view.imag_ids.size(); ++k)
    out.s_i[view.imag_ids[k]] = t.val(dv.s_i)(static_cast<int>(k), 0);
  out.gamma = t.val(dv.gamma)(0, 0);
  return out;
}

std::map<int, double> fuse_scores(const std::map<int, double>& s_r,
                                  const std::map<int, double>& s_i, double gamma,
                                  const memory::MemoryMap& map) {
  std::map<int, double> fused = s_r;
  if (s_i.empty()) return fused;
  std::vector<int> nav_ids;
  for (const auto& [id, v] : s_r)
    if (id != memory::MemoryMap::kStopId) nav_ids.push_back(id);
  if (nav_ids.empty())
    fail(ErrorKind::Fusion, "imagination scores present but no navigable node");
  for (const auto& [iid, sv] : s_i) {
    const Vec3& p = map.node(iid).position;
    double best = std::numeric_limits<double>::infinity();
    int best_id = nav_ids.front();
    for (int nid : nav_ids) {
      double d = (map.node(nid).position - p).norm();
      if (d < best - 1e-12) {
        best = d;
        best_id = nid;
      }
    }
    fused[best_id] += gamma * sv;
  }
  return fused;
}

Action select_action(const std::map<int, double>& fused, const memory::MemoryMap& map,
                     SelectMode mode, double temperature, Rng& rng) {
  if (fused.empty()) fail(ErrorKind::Config, "select_action with no scores");
  int chosen = fused.begin()->first;
  if (mode == SelectMode::Greedy) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [id, v] : fused) {  // ascending id: ties keep the lowest
      if (v > best) {
        best = v;
        chosen = id;
      }
    }
  } else {
    if (temperature <= 0.0) fail(ErrorKind::Config, "sampling temperature must be > 0");
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& [id, v] : fused) mx = std::max(mx, v);
    std::vector<std::pair<int, double>> probs;
    double z = 0.0;
    for (const auto& [id, v] : fused) {
      double e = std::exp((v - mx) / temperature);
      probs.push_back({id, e});
      z += e;
    }
    double u = rng.uniform() * z;
    double acc = 0.0;
    chosen = probs.back().first;
    for (const auto& [id, e] : probs) {
      acc += e;
      if (u < acc) {
        chosen = id;
        break;
      }
    }
  }
  Action act;
  if (chosen == memory::MemoryMap::kStopId) {
    act.stop = true;
    return act;
  }
  act.stop = false;
  act.target = chosen;
  act.route = map.route(map.current_id(), chosen);
  return act;
}

double sap_loss(const std::map<int, double>& fused, int expert_target) {
  auto it = fused.find(expert_target);
  if (it == fused.end())
    fail(ErrorKind::Supervision,
         "expert target " + std::to_string(expert_target) + " not in candidate set");
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& [id, v] : fused) mx = std::max(mx, v);
  double z = 0.0;
  for (const auto& [id, v] : fused) z += std::exp(v - mx);
  return std::log(z) - (it->second - mx);
}

nn::LossFn make_sap_loss_fn(ParamStore& ps, const PolicyConfig& cfg, const MapView& view,
                            std::vector<int> tokens, const world::Vocab& vocab,
                            int expert_candidate) {
  world::Vocab vocab_copy = vocab;
  PolicyConfig cfg_copy = cfg;
  MapView view_copy = view;
  return [&ps, cfg_copy, view_copy, tokens, vocab_copy, expert_candidate](Tape& t) {
    Var instr = encode_instruction(t, ps, cfg_copy, tokens, vocab_copy);
    DecisionVars dv = decide(t, ps, cfg_copy, view_copy, instr, MemoryMode::Hybrid);
    Var logits = nn::transpose(t, dv.fused);
    return nn::cross_entropy_logits(t, logits, expert_candidate);
  };
}

}  // namespace sali::policy
