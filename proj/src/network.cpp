#include "mdcell/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "mdcell/error.hpp"

namespace mdcell {

LayerSpec LayerSpec::md(CellKind cell, int cells_per_direction) {
  LayerSpec l;
  l.type = LayerType::MdRecurrent;
  l.cell = cell;
  l.cells = cells_per_direction;
  return l;
}

LayerSpec LayerSpec::feed_forward(int width) {
  LayerSpec l;
  l.type = LayerType::FeedForwardTanh;
  l.width = width;
  return l;
}

LayerSpec LayerSpec::subsample(std::vector<int> block) {
  LayerSpec l;
  l.type = LayerType::Subsample;
  l.block = std::move(block);
  return l;
}

LayerSpec LayerSpec::output(int labels) {
  LayerSpec l;
  l.type = LayerType::Output;
  l.labels = labels;
  return l;
}

NetworkSpec NetworkSpec::demo(int labels, CellKind cell) {
  NetworkSpec s;
  s.layers = {LayerSpec::md(cell, 4), LayerSpec::subsample({3, 2}), LayerSpec::feed_forward(12),
              LayerSpec::md(cell, 8), LayerSpec::output(labels)};
  return s;
}

NetworkSpec NetworkSpec::hierarchical3(int labels, const std::vector<CellKind>& cells) {
  require(cells.size() == 3, "hierarchical3 needs one cell kind per MD layer (3)");
  NetworkSpec s;
  s.layers = {LayerSpec::md(cells[0], 2),      LayerSpec::subsample({3, 2}), LayerSpec::feed_forward(6),
              LayerSpec::md(cells[1], 10),     LayerSpec::subsample({2, 2}), LayerSpec::feed_forward(20),
              LayerSpec::md(cells[2], 20),     LayerSpec::output(labels)};
  return s;
}

void validate(const NetworkSpec& spec) {
  require(spec.dims >= 1 && spec.dims <= kMaxDims, "network: unsupported dimension");
  require(spec.input_channels >= 1, "network: need at least one input channel");
  require(std::isfinite(spec.init_scale) && spec.init_scale >= 0.0, "network: init_scale must be finite and >= 0");
  require(std::isfinite(spec.recurrent_scale) && spec.recurrent_scale >= 0.0,
          "network: recurrent_scale must be finite and >= 0");
  require(std::isfinite(spec.forget_bias), "network: forget_bias must be finite");
  require(!spec.layers.empty() && spec.layers.back().type == LayerType::Output, "network: last layer must be output");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "network layer " + std::to_string(i) + ": ";
    switch (l.type) {
      case LayerType::MdRecurrent:
        require(l.cells >= 1, where + "need at least one cell per direction");
        require(kind_supports_dims(l.cell, spec.dims), where + std::string(to_string(l.cell)) +
                                                           " does not support D=" + std::to_string(spec.dims));
        break;
      case LayerType::FeedForwardTanh: require(l.width >= 1, where + "width must be >= 1"); break;
      case LayerType::Subsample:
        require(static_cast<int>(l.block.size()) == spec.dims, where + "block needs one factor per dimension");
        for (int b : l.block) require(b >= 1, where + "block factors must be >= 1");
        break;
      case LayerType::Output:
        require(i + 1 == spec.layers.size(), where + "output layer must be last");
        require(l.labels >= 2, where + "need at least one label plus the blank");
        break;
    }
  }
}

std::vector<int> feature_widths(const NetworkSpec& spec) {
  validate(spec);
  std::vector<int> out;
  int f = spec.input_channels;
  for (const LayerSpec& l : spec.layers) {
    switch (l.type) {
      case LayerType::MdRecurrent: f = l.cells * ScanDirection::count(spec.dims); break;
      case LayerType::FeedForwardTanh: f = l.width; break;
      case LayerType::Subsample:
        f *= std::accumulate(l.block.begin(), l.block.end(), 1, std::multiplies<>());
        break;
      case LayerType::Output: f = l.labels; break;
    }
    out.push_back(f);
  }
  return out;
}

LatticeShape subsampled_shape(const LatticeShape& shape, std::span<const int> block) {
  require(static_cast<int>(block.size()) == shape.dims(), "subsample: block/shape dimension mismatch");
  std::vector<int> ext(static_cast<std::size_t>(shape.dims()));
  for (int d = 0; d < shape.dims(); ++d) {
    const int b = block[static_cast<std::size_t>(d)];
    ext[static_cast<std::size_t>(d)] = (shape.extent(d) + b - 1) / b;
  }
  return LatticeShape(ext);
}

LatticeShape final_shape(const NetworkSpec& spec, const LatticeShape& input) {
  validate(spec);
  require(input.dims() == spec.dims, "network: input dimension mismatch");
  LatticeShape s = input;
  for (const LayerSpec& l : spec.layers)
    if (l.type == LayerType::Subsample) s = subsampled_shape(s, l.block);
  return s;
}

std::size_t parameter_count(const NetworkSpec& spec) {
  const auto widths = feature_widths(spec);
  std::size_t n = 0;
  int f = spec.input_channels;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.type == LayerType::MdRecurrent) {
      const auto rows = gate_layout(l.cell, spec.dims).size() * static_cast<std::size_t>(l.cells);
      const auto per_dir = rows * (static_cast<std::size_t>(f) + static_cast<std::size_t>(spec.dims * l.cells) + 1);
      n += per_dir * static_cast<std::size_t>(ScanDirection::count(spec.dims));
    } else if (l.type == LayerType::FeedForwardTanh || l.type == LayerType::Output) {
      n += static_cast<std::size_t>(widths[i]) * (static_cast<std::size_t>(f) + 1);
    }
    f = widths[i];
  }
  return n;
}

namespace {

const char* layer_type_name(LayerType t) {
  switch (t) {
    case LayerType::MdRecurrent: return "md";
    case LayerType::FeedForwardTanh: return "tanh";
    case LayerType::Subsample: return "subsample";
    case LayerType::Output: return "output";
  }
  return "?";
}

}  // namespace

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : spec.layers) {
    nlohmann::json j{{"type", layer_type_name(l.type)}};
    switch (l.type) {
      case LayerType::MdRecurrent:
        j["cell"] = std::string(to_string(l.cell));
        j["cells"] = l.cells;
        break;
      case LayerType::FeedForwardTanh: j["width"] = l.width; break;
      case LayerType::Subsample: j["block"] = l.block; break;
      case LayerType::Output: j["labels"] = l.labels; break;
    }
    layers.push_back(j);
  }
  return {{"dims", spec.dims},
          {"input_channels", spec.input_channels},
          {"seed", spec.seed},
          {"init_scale", spec.init_scale},
          {"recurrent_scale", spec.recurrent_scale},
          {"forget_bias", spec.forget_bias},
          {"layers", layers}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  try {
    s.dims = j.value("dims", 2);
    s.input_channels = j.value("input_channels", 1);
    s.seed = j.value("seed", std::uint64_t{1});
    s.init_scale = j.value("init_scale", s.init_scale);
    s.recurrent_scale = j.value("recurrent_scale", s.recurrent_scale);
    s.forget_bias = j.value("forget_bias", 0.0);
    for (const auto& l : j.at("layers")) {
      const std::string type = l.at("type").get<std::string>();
      if (type == "md") {
        s.layers.push_back(LayerSpec::md(parse_cell_kind(l.at("cell").get<std::string>()), l.at("cells").get<int>()));
      } else if (type == "tanh") {
        s.layers.push_back(LayerSpec::feed_forward(l.at("width").get<int>()));
      } else if (type == "subsample") {
        s.layers.push_back(LayerSpec::subsample(l.at("block").get<std::vector<int>>()));
      } else if (type == "output") {
        s.layers.push_back(LayerSpec::output(l.at("labels").get<int>()));
      } else {
        throw ContractViolation("network spec: unknown layer type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("network spec: ") + e.what());
  }
  validate(s);
  return s;
}

Model build(const NetworkSpec& spec) {
  const auto widths = feature_widths(spec);
  Model m;
  m.spec = spec;
  struct Block {
    int offset;
    std::size_t count;
    double scale;
  };
  std::vector<Block> weight_blocks;
  std::vector<std::pair<int, std::size_t>> forget_rows;
  auto weights = [&](std::size_t count, double scale) {
    const int off = m.params.allocate(count);
    weight_blocks.push_back({off, count, scale});
    return off;
  };
  int f = spec.input_channels;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerParams lp;
    lp.in_features = f;
    lp.out_features = widths[i];
    const auto in = static_cast<std::size_t>(f);
    if (l.type == LayerType::MdRecurrent) {
      const auto layout = gate_layout(l.cell, spec.dims);
      const auto cells = static_cast<std::size_t>(l.cells);
      const std::size_t rows = layout.size() * cells;
      for (int d = 0; d < ScanDirection::count(spec.dims); ++d) {
        LayerParams::Direction dir;
        dir.w_in = weights(rows * in, spec.init_scale);
        for (int k = 0; k < spec.dims; ++k) dir.w_rec.push_back(weights(rows * cells, spec.recurrent_scale));
        dir.bias = m.params.allocate(rows);
        for (std::size_t slot = 0; slot < layout.size(); ++slot)
          if (layout[slot].role == GateRole::Forget || layout[slot].role == GateRole::ForgetDim)
            forget_rows.emplace_back(dir.bias + static_cast<int>(slot * cells), cells);
        lp.dirs.push_back(std::move(dir));
      }
    } else if (l.type == LayerType::FeedForwardTanh || l.type == LayerType::Output) {
      const auto out = static_cast<std::size_t>(widths[i]);
      lp.w = weights(out * in, spec.init_scale);
      lp.b = m.params.allocate(out);
    }
    m.layers.push_back(std::move(lp));
    f = widths[i];
  }
  std::mt19937_64 rng(spec.seed);
  for (const Block& b : weight_blocks) {
    std::uniform_real_distribution<double> uni(-b.scale, b.scale);
    for (std::size_t k = 0; k < b.count; ++k)
      m.params.value[static_cast<std::size_t>(b.offset) + k] = b.scale == 0.0 ? Real(0) : static_cast<Real>(uni(rng));
  }
  for (const auto& [off, count] : forget_rows)
    std::fill_n(m.params.value.begin() + off, count, static_cast<Real>(spec.forget_bias));
  return m;
}

namespace {

struct CellSlots {
  int input_gate = -1, forget = -1, output = -1, output0 = -1, output1 = -1;
  int gamma2 = -1, gamma3 = -1, gamma4 = -1;
  std::vector<int> forget_dim, lambda;
};

CellSlots slots_of(const std::vector<GateSlot>& layout) {
  CellSlots c;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const int k = static_cast<int>(i);
    switch (layout[i].role) {
      case GateRole::CellInput: break;
      case GateRole::InputGate: c.input_gate = k; break;
      case GateRole::Forget: c.forget = k; break;
      case GateRole::ForgetDim: c.forget_dim.push_back(k); break;
      case GateRole::Lambda: c.lambda.push_back(k); break;
      case GateRole::Output: c.output = k; break;
      case GateRole::Output0: c.output0 = k; break;
      case GateRole::Output1: c.output1 = k; break;
      case GateRole::Gamma2: c.gamma2 = k; break;
      case GateRole::Gamma3: c.gamma3 = k; break;
      case GateRole::Gamma4: c.gamma4 = k; break;
    }
  }
  return c;
}

struct CellOut {
  Operand s;
  Operand y;
};

CellOut record_cell(Tape& tape, CellKind kind, const CellSlots& slots, Operand cin, Operand gates, int cells,
                    std::span<const Operand> prev) {
  auto gate = [&](int slot) { return gates.slice((slot - 1) * cells, cells); };
  auto sum_of = [&](std::vector<Operand> terms) {
    std::erase_if(terms, [](const Operand& o) { return !o.present(); });
    return terms.size() == 1 ? terms[0] : tape.sum(terms);
  };
  auto mix = [&]() {
    std::vector<Operand> lambda;
    for (int k : slots.lambda) lambda.push_back(gate(k));
    return tape.convex_mix(lambda, prev, kind == CellKind::LstmStableReduced);
  };
  switch (kind) {
    case CellKind::Unit: return {cin, cin};
    case CellKind::LstmNoForget: {
      std::vector<Operand> terms{tape.mul(gate(slots.input_gate), cin)};
      terms.insert(terms.end(), prev.begin(), prev.end());
      const Operand s = sum_of(terms);
      return {s, tape.mul(gate(slots.output), tape.tanh(s))};
    }
    case CellKind::Lstm: {
      std::vector<Operand> terms{tape.mul(gate(slots.input_gate), cin)};
      for (std::size_t d = 0; d < prev.size(); ++d)
        if (prev[d].present()) terms.push_back(tape.mul(gate(slots.forget_dim[d]), prev[d]));
      const Operand s = sum_of(terms);
      return {s, tape.mul(gate(slots.output), tape.tanh(s))};
    }
    case CellKind::LstmStable:
    case CellKind::LstmStableReduced: {
      const Operand s = tape.add(tape.mul(gate(slots.input_gate), cin), tape.mul(gate(slots.forget), mix()));
      return {s, tape.mul(gate(slots.output), tape.tanh(s))};
    }
    case CellKind::Leaky: {
      const Operand s = tape.blend(cin, mix(), gate(slots.forget));
      return {s, tape.mul(gate(slots.output), tape.tanh(s))};
    }
    case CellKind::LeakyLP: {
      const Operand m = mix();
      const Operand s = tape.blend(cin, m, gate(slots.forget));
      return {s, tape.tanh(tape.add(tape.mul(gate(slots.output0), s), tape.mul(gate(slots.output1), m)))};
    }
    case CellKind::TypeB: {
      const Operand m = mix();
      const Operand s = tape.blend(cin, m, gate(slots.forget));
      return {s, tape.scale(tape.add(s, m), Real(0.5))};
    }
    case CellKind::TypeC: {
      const Operand m = mix();
      const Operand g1 = gate(slots.forget);
      const Operand s = tape.add(tape.mul(tape.one_minus(g1), cin), tape.mul(tape.mul(g1, gate(slots.gamma4)), m));
      return {s, tape.tanh(tape.add(tape.mul(gate(slots.gamma2), s), tape.mul(gate(slots.gamma3), m)))};
    }
    case CellKind::TypeD: {
      const Operand m = mix();
      const Operand s = tape.blend(cin, m, gate(slots.forget));
      return {s, tape.mul(gate(slots.gamma3), tape.blend(m, s, gate(slots.gamma2)))};
    }
    case CellKind::TypeE: {
      const Operand m = mix();
      const Operand s = tape.blend(cin, m, gate(slots.forget));
      return {s, tape.tanh(tape.add(tape.mul(gate(slots.gamma2), s), tape.mul(gate(slots.gamma3), tape.sub(s, m))))};
    }
  }
  return {};
}

std::vector<Operand> record_md(Tape& tape, const NetworkSpec& spec, const LayerSpec& l, const LayerParams& lp,
                               int layer_index, const LatticeShape& shape, const std::vector<Operand>& in) {
  const int dims = spec.dims;
  const auto layout = gate_layout(l.cell, dims);
  const CellSlots slots = slots_of(layout);
  const int cells = l.cells;
  const int groups = static_cast<int>(layout.size());
  const int rows = groups * cells;
  const int ndir = ScanDirection::count(dims);
  std::vector<std::vector<Operand>> outs(static_cast<std::size_t>(ndir));
  std::vector<Operand> h(shape.size()), s(shape.size());
  std::vector<AffineTerm> terms(static_cast<std::size_t>(dims) + 1);
  std::vector<Operand> prev(static_cast<std::size_t>(dims));
  for (int di = 0; di < ndir; ++di) {
    const ScanPlan plan = make_scan_plan(shape, ScanDirection::from_index(dims, di));
    const LayerParams::Direction& w = lp.dirs[static_cast<std::size_t>(di)];
    for (std::uint32_t lin : plan.order) {
      tape.set_site({layer_index, di, static_cast<std::int64_t>(lin)});
      terms[0] = {w.w_in, in[lin]};
      for (int d = 0; d < dims; ++d) {
        const std::uint32_t q = plan.predecessor(lin, d);
        const bool present = q != ScanPlan::kAbsent;
        terms[static_cast<std::size_t>(d) + 1] = {w.w_rec[static_cast<std::size_t>(d)], present ? h[q] : Operand{}};
        prev[static_cast<std::size_t>(d)] = present ? s[q] : Operand{};
      }
      const Operand net = tape.affine(rows, w.bias, terms);
      const Operand cin = tape.tanh(net.slice(0, cells));
      const Operand gates = groups > 1 ? tape.logistic(net.slice(cells, rows - cells)) : Operand{};
      const CellOut c = record_cell(tape, l.cell, slots, cin, gates, cells, prev);
      h[lin] = c.y;
      s[lin] = c.s;
    }
    outs[static_cast<std::size_t>(di)] = h;
  }
  std::vector<Operand> out(shape.size());
  std::vector<Operand> parts(static_cast<std::size_t>(ndir));
  tape.set_site({layer_index, -1, -1});
  for (std::size_t lin = 0; lin < shape.size(); ++lin) {
    for (int di = 0; di < ndir; ++di) parts[static_cast<std::size_t>(di)] = outs[static_cast<std::size_t>(di)][lin];
    out[lin] = tape.concat(parts);
  }
  return out;
}

std::vector<Operand> record_subsample(Tape& tape, const LayerSpec& l, int features, const LatticeShape& shape,
                                      const LatticeShape& out_shape, const std::vector<Operand>& in) {
  const int dims = shape.dims();
  const std::vector<Real> zeros(static_cast<std::size_t>(features), Real(0));
  const Operand zero = tape.constant(zeros);
  const LatticeShape block(l.block);
  std::vector<Operand> out(out_shape.size());
  std::vector<Operand> parts(block.size());
  for (std::size_t o = 0; o < out_shape.size(); ++o) {
    const Coord oc = out_shape.coord(o);
    for (std::size_t b = 0; b < block.size(); ++b) {
      const Coord bc = block.coord(b);
      Coord src(dims);
      for (int d = 0; d < dims; ++d) src[d] = oc[d] * block.extent(d) + bc[d];
      parts[b] = shape.contains(src) ? in[shape.linear(src)] : zero;
    }
    out[o] = tape.concat(parts);
  }
  return out;
}

}  // namespace

Recording record_forward(Tape& tape, const Model& model, const Grid& image) {
  const NetworkSpec& spec = model.spec;
  require(image.shape.dims() == spec.dims, "forward: image dimension does not match the network");
  require(image.shape.size() > 0, "forward: empty image");
  require(image.channels == spec.input_channels, "forward: channel count mismatch");
  require(image.data.size() == image.shape.size() * static_cast<std::size_t>(image.channels),
          "forward: image data size mismatch");
  tape.clear();
  Recording rec;
  rec.input = tape.input(image.data);
  LatticeShape shape = image.shape;
  std::vector<Operand> cur(shape.size());
  for (std::size_t lin = 0; lin < shape.size(); ++lin)
    cur[lin] = rec.input.slice(static_cast<int>(lin) * image.channels, image.channels);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams& lp = model.layers[i];
    const int li = static_cast<int>(i);
    tape.set_site({li, -1, -1});
    switch (l.type) {
      case LayerType::MdRecurrent: cur = record_md(tape, spec, l, lp, li, shape, cur); break;
      case LayerType::Subsample: {
        const LatticeShape next = subsampled_shape(shape, l.block);
        cur = record_subsample(tape, l, lp.in_features, shape, next, cur);
        shape = next;
        break;
      }
      case LayerType::FeedForwardTanh:
        for (std::size_t lin = 0; lin < shape.size(); ++lin) {
          tape.set_site({li, -1, static_cast<std::int64_t>(lin)});
          const AffineTerm t[] = {{lp.w, cur[lin]}};
          cur[lin] = tape.tanh(tape.affine(lp.out_features, lp.b, t));
        }
        break;
      case LayerType::Output: {
        const int dims = shape.dims();
        const auto frames = static_cast<std::size_t>(shape.extent(dims - 1));
        std::vector<std::vector<Operand>> columns(frames);
        for (std::size_t lin = 0; lin < shape.size(); ++lin) columns[lin % frames].push_back(cur[lin]);
        for (std::size_t t = 0; t < frames; ++t) {
          tape.set_site({li, -1, static_cast<std::int64_t>(t)});
          const Operand collapsed = columns[t].size() == 1 ? columns[t][0] : tape.sum(columns[t]);
          const AffineTerm term[] = {{lp.w, collapsed}};
          rec.logits.push_back(tape.affine(lp.out_features, lp.b, term));
        }
        break;
      }
    }
  }
  return rec;
}

namespace {

Matrix logits_of(const Tape& tape, const Recording& rec) {
  Matrix m;
  m.reserve(rec.logits.size());
  for (const Operand& o : rec.logits) {
    const auto v = tape.value(o);
    m.emplace_back(v.begin(), v.end());
  }
  return m;
}

}  // namespace

Matrix forward(const Model& model, const Grid& image) {
  Tape tape(&model.params);
  const Recording rec = record_forward(tape, model, image);
  Matrix post = logits_of(tape, rec);
  for (auto& row : post) row = softmax(row);
  return post;
}

SampleGradient loss_and_gradient(Tape& tape, const Model& model, const Grid& image, const LabelSeq& target,
                                 std::span<Real> param_grad, std::vector<Real>* input_grad) {
  require(param_grad.size() == model.params.size(), "loss_and_gradient: gradient buffer size mismatch");
  const Recording rec = record_forward(tape, model, image);
  SampleGradient out;
  const Matrix logits = logits_of(tape, rec);
  out.posteriors.reserve(logits.size());
  for (const auto& row : logits) out.posteriors.push_back(softmax(row));
  if ((out.divergence = tape.first_nonfinite())) {
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const CtcResult ctc = ctc_loss_logits(logits, target);
  out.loss = ctc.loss;
  out.status = ctc.status;
  if (ctc.status != CtcStatus::Ok) return out;
  for (std::size_t t = 0; t < rec.logits.size(); ++t) {
    auto adj = tape.adjoint(rec.logits[t]);
    for (std::size_t k = 0; k < adj.size(); ++k) adj[k] = static_cast<Real>(ctc.grad[t][k]);
  }
  tape.backward(param_grad);
  if (input_grad) {
    const auto a = tape.adjoint_view(rec.input);
    input_grad->assign(a.begin(), a.end());
  }
  return out;
}

GradCheckResult gradient_check(CellKind kind, const LatticeShape& shape, std::uint64_t seed, double step) {
  const int dims = shape.dims();
  NetworkSpec spec;
  spec.dims = dims;
  spec.input_channels = 2;
  spec.seed = seed;
  spec.init_scale = 0.5;
  spec.recurrent_scale = 0.5;
  std::vector<int> block(static_cast<std::size_t>(dims), 1);
  block[0] = 2;
  spec.layers = {LayerSpec::md(kind, 2), LayerSpec::subsample(block), LayerSpec::feed_forward(3),
                 LayerSpec::output(3)};
  const Model model = build(spec);
  Grid image(shape, 2);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Real& v : image.data) v = static_cast<Real>(u(rng));
  const LabelSeq target{0, 1};

  GradCheckResult out;
  out.parameter_count = model.params.size();
  Tape tape(&model.params);
  std::vector<Real> grad(model.params.size());
  std::vector<Real> input_grad;
  const SampleGradient g = loss_and_gradient(tape, model, image, target, grad, &input_grad);
  require(g.status == CtcStatus::Ok && !g.divergence, "gradient_check: reference loss is not finite");
  out.loss = g.loss;

  Model probe = model;
  Tape probe_tape(&probe.params);
  std::vector<Real> scratch(model.params.size());
  auto loss_at_params = [&](std::span<const double> x) {
    std::copy(x.begin(), x.end(), probe.params.value.begin());
    return loss_and_gradient(probe_tape, probe, image, target, scratch).loss;
  };
  const std::vector<double> x(model.params.value.begin(), model.params.value.end());
  const std::vector<double> gx(grad.begin(), grad.end());
  out.params = finite_diff_check(loss_at_params, x, gx, step);

  probe.params = model.params;
  Grid moved = image;
  auto loss_at_input = [&](std::span<const double> v) {
    std::copy(v.begin(), v.end(), moved.data.begin());
    return loss_and_gradient(probe_tape, probe, moved, target, scratch).loss;
  };
  const std::vector<double> xi(image.data.begin(), image.data.end());
  const std::vector<double> gi(input_grad.begin(), input_grad.end());
  out.input = finite_diff_check(loss_at_input, xi, gi, step);
  return out;
}

CorpusLer evaluate(const Model& model, std::span<const Example> samples) {
  std::vector<LabelSeq> hyps, refs;
  Tape tape(&model.params);
  for (const Example& e : samples) {
    const Recording rec = record_forward(tape, model, e.image);
    hyps.push_back(best_path_decode(logits_of(tape, rec)));
    refs.push_back(e.target);
  }
  return corpus_ler(hyps, refs);
}

TrainLog train_sgd(Model& model, std::span<const Example> train, std::span<const Example> validation,
                   const TrainOptions& options, Model* best) {
  require(options.learning_rate >= 0.0 && std::isfinite(options.learning_rate), "train: learning rate must be >= 0");
  require(options.epochs >= 0, "train: epochs must be >= 0");
  TrainLog log;
  Tape tape(&model.params);
  std::vector<Real> grad(model.params.size());
  model.learning_rate = options.learning_rate;

  auto finish_epoch = [&](EpochRecord rec) {
    const CorpusLer ler = evaluate(model, validation);
    rec.val_ler = ler.micro;
    rec.val_ler_macro = ler.macro;
    if (log.epochs.empty() || rec.val_ler < log.best_ler) {
      log.best_ler = rec.val_ler;
      log.best_epoch = rec.epoch;
      if (best) *best = model;
    }
    log.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  };

  EpochRecord initial;
  initial.epoch = model.epoch;
  {
    double total = 0.0;
    std::size_t n = 0;
    for (const Example& e : train) {
      const Recording rec = record_forward(tape, model, e.image);
      const CtcResult r = ctc_loss_logits(logits_of(tape, rec), e.target);
      if (r.status != CtcStatus::Ok) {
        ++initial.infeasible;
        continue;
      }
      total += r.loss;
      ++n;
    }
    initial.train_loss = n ? total / static_cast<double>(n) : 0.0;
  }
  finish_epoch(initial);

  std::mt19937_64 rng(options.shuffle_seed);
  std::vector<std::size_t> order(train.size());
  for (int e = 0; e < options.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = model.epoch + 1;
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t idx : order) {
      const Example& ex = train[idx];
      std::fill(grad.begin(), grad.end(), Real(0));
      const SampleGradient g = loss_and_gradient(tape, model, ex.image, ex.target, grad);
      if (g.divergence) {
        log.diverged = true;
        log.divergence = "sample " + ex.id + ": " + g.divergence->describe();
        return log;
      }
      if (g.status != CtcStatus::Ok) {
        ++rec.infeasible;
        continue;
      }
      const auto bad = std::find_if(grad.begin(), grad.end(), [](Real v) { return !std::isfinite(v); });
      if (bad != grad.end()) {
        log.diverged = true;
        log.divergence = "sample " + ex.id + ": non-finite gradient at parameter " +
                         std::to_string(bad - grad.begin());
        return log;
      }
      total += g.loss;
      ++n;
      const auto lr = static_cast<Real>(options.learning_rate);
      for (std::size_t k = 0; k < grad.size(); ++k) model.params.value[k] -= lr * grad[k];
    }
    rec.train_loss = n ? total / static_cast<double>(n) : 0.0;
    ++model.epoch;
    finish_epoch(rec);
  }
  return log;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,train_loss,val_ler,val_ler_macro,infeasible\n";
  for (const EpochRecord& r : log.epochs)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_ler << ',' << r.val_ler_macro << ',' << r.infeasible << '\n';
  return os.str();
}

namespace {

constexpr const char* kModelFormat = "mdcell-model";
constexpr int kModelVersion = 1;

}  // namespace

void save_model(const Model& model, std::ostream& out) {
  const nlohmann::json header{{"format", kModelFormat},
                              {"version", kModelVersion},
                              {"spec", to_json(model.spec)},
                              {"seed", model.spec.seed},
                              {"epoch", model.epoch},
                              {"learning_rate", model.learning_rate},
                              {"weights", model.params.size()}};
  out << header.dump() << '\n';
  for (Real v : model.params.value) {
    const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    out.write(bytes, 8);
  }
  require(static_cast<bool>(out), "save_model: write failed");
}

Model load_model(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "load_model: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("load_model: bad header: ") + e.what());
  }
  require(header.value("format", "") == kModelFormat, "load_model: not a model file");
  require(header.value("version", 0) == kModelVersion, "load_model: unsupported version");
  Model m = build(spec_from_json(header.at("spec")));
  require(header.at("weights").get<std::size_t>() == m.params.size(), "load_model: weight count does not match spec");
  m.epoch = header.value("epoch", 0);
  m.learning_rate = header.value("learning_rate", 0.0);
  for (Real& v : m.params.value) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    require(in.gcount() == 8, "load_model: truncated weight blob");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = static_cast<Real>(std::bit_cast<double>(bits));
  }
  return m;
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "save_model: cannot open " + path);
  save_model(model, out);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "load_model: cannot open " + path);
  return load_model(in);
}

}  // namespace mdcell
