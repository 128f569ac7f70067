#include "delib/delibnet.hpp"

#include <algorithm>

namespace delib {

void IntermediateFeatures::validate(const Vocab& vocab, int width) const {
  if (tokens.empty()) {
    throw ContractViolation("empty first-pass output; materialize it as [EOS]");
  }
  check_input_tokens(tokens, vocab);
  if (has_extras() || !contexts.empty()) {
    const int n = static_cast<int>(tokens.size());
    if (states.rows() != n || contexts.rows() != n || states.cols() != width ||
        contexts.cols() != width) {
      throw ContractViolation("intermediate extras " + states.shape_string() + " / " +
                              contexts.shape_string() + " do not align with " +
                              std::to_string(n) + " tokens of width " + std::to_string(width));
    }
  }
}

IntermediateFeatures IntermediateFeatures::from_tokens(TokenSeq tokens) {
  if (tokens.empty()) tokens.push_back(Vocab::eos);
  return {std::move(tokens), {}, {}};
}

IntermediateFeatures IntermediateFeatures::from_generation(const Generation& g) {
  return {g.tokens, g.states, g.contexts};
}

SecondPassParams SecondPassParams::zeros(const FirstPassParams& first) {
  const ModelConfig& c = first.config;
  const int V = c.vocab_size, d = c.width;
  SecondPassParams p{c, {}};
  for (const auto& [name, handle] : first.table) {
    if (is_encoder_param(name)) p.table.share(name, handle);
  }
  p.table.add("dec2.embed", Tensor(V, d));
  GruCell::declare(p.table, "dec2.gru", c.context_in_state ? 3 * d : d, d);
  p.table.add("yenc.embed", Tensor(V, d));
  GruCell::declare(p.table, "yenc.gru", c.intermediate_extras ? 3 * d : d, d);
  AdditiveAttention::declare(p.table, "attx", d, d, d);
  AdditiveAttention::declare(p.table, "atty", d, d, d);
  p.table.add("out2.W", Tensor(3 * d, V - 1));
  p.table.add("out2.b", Tensor(1, V - 1));
  return p;
}

SecondPassParams SecondPassParams::create(const FirstPassParams& first, std::uint64_t seed) {
  SecondPassParams p = zeros(first);
  ParameterTable own;
  for (const auto& name : p.own_names()) own.share(name, p.table.handle(name));
  Rng rng = Rng::derive(seed, {2});
  initialize_uniform(own, rng, p.config.init_bound);
  return p;
}

void SecondPassParams::rebind_encoder(const FirstPassParams& first) {
  for (const auto& [name, handle] : first.table) {
    if (is_encoder_param(name)) table.rebind(name, handle);
  }
}

bool SecondPassParams::shares_encoder_with(const FirstPassParams& first) const {
  for (const auto& [name, handle] : first.table) {
    if (is_encoder_param(name) && table.handle(name) != handle) return false;
  }
  return true;
}

std::vector<std::string> SecondPassParams::own_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : table) {
    if (!is_encoder_param(name)) out.push_back(name);
  }
  return out;
}

namespace {

// Copies src into the top-left corner of dst.
void copy_block(const Tensor& src, Tensor& dst) {
  for (int r = 0; r < src.rows(); ++r) {
    for (int c = 0; c < src.cols(); ++c) dst(r, c) = src(r, c);
  }
}

}  // namespace

SecondPassParams single_pass_equivalent(const FirstPassParams& first) {
  SecondPassParams p = SecondPassParams::zeros(first);
  const ParameterTable& f = first.table;
  copy_block(f.at("dec.embed"), p.table.at("dec2.embed"));
  for (const char* leaf : {"Wz", "Wr", "Wn", "Uz", "Ur", "Un", "bz", "br", "bn"}) {
    copy_block(f.at(std::string("dec.gru.") + leaf), p.table.at(std::string("dec2.gru.") + leaf));
  }
  for (const char* leaf : {"Ws", "Wh", "v"}) {
    copy_block(f.at(std::string("att.") + leaf), p.table.at(std::string("attx.") + leaf));
  }
  copy_block(f.at("out.W"), p.table.at("out2.W"));
  copy_block(f.at("out.b"), p.table.at("out2.b"));
  return p;
}

DelibModel DelibModel::create(const ModelConfig& config, std::uint64_t seed) {
  FirstPassParams f = FirstPassParams::create(config, seed);
  SecondPassParams s = SecondPassParams::create(f, seed);
  return DelibModel(std::move(f), std::move(s));
}

DelibModel::DelibModel(FirstPassParams f, SecondPassParams s) : first(std::move(f)), second(std::move(s)) {
  if (!(first.config == second.config)) throw ContractViolation("first/second pass configs differ");
  second.rebind_encoder(first);
}

DelibModel::DelibModel(const DelibModel& other) : first(other.first), second(other.second) {
  second.rebind_encoder(first);
}

DelibModel& DelibModel::operator=(const DelibModel& other) {
  if (this != &other) {
    first = other.first;
    second = other.second;
    second.rebind_encoder(first);
  }
  return *this;
}

ParameterTable DelibModel::all_parameters() const {
  return ParameterTable::view_union(first.table, second.table);
}

PassGradients PassGradients::zeros_like(const DelibModel& model) {
  return {GradientMap::zeros_like(model.first.table), GradientMap::zeros_like(model.second.table)};
}

GradientMap PassGradients::merged() const {
  GradientMap out = first;
  out.accumulate(second);
  return out;
}

void PassGradients::accumulate(const PassGradients& other, double scale) {
  first.accumulate(other.first, scale);
  second.accumulate(other.second, scale);
}

void PassGradients::scale(double factor) {
  first.scale(factor);
  second.scale(factor);
}

std::vector<double> PassGradients::flatten() const {
  std::vector<double> out = first.flatten();
  const std::vector<double> s = second.flatten();
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

SecondPassNet::SecondPassNet(Graph& g, const SecondPassParams& params, int group)
    : graph_(&g), config_(params.config) {
  const ParameterTable& t = params.table;
  enc_embed_ = bind_param(g, t, "enc.embed", group);
  enc_ = GruCell::bind(g, t, "enc.gru", group);
  yenc_embed_ = bind_param(g, t, "yenc.embed", group);
  yenc_ = GruCell::bind(g, t, "yenc.gru", group);
  dec_embed_ = bind_param(g, t, "dec2.embed", group);
  dec_ = GruCell::bind(g, t, "dec2.gru", group);
  attx_ = AdditiveAttention::bind(g, t, "attx", group);
  atty_ = AdditiveAttention::bind(g, t, "atty", group);
  out_W_ = bind_param(g, t, "out2.W", group);
  out_b_ = bind_param(g, t, "out2.b", group);
}

AttentionMemory SecondPassNet::encode_input(std::span<const Token> x) const {
  check_input_tokens(x, config_.vocab());
  return attx_.memory(encode_tokens(enc_embed_, enc_, x));
}

Var SecondPassNet::intermediate_embed(Token t) const {
  if (!config_.vocab().contains(t)) {
    throw ContractViolation("token id " + std::to_string(t) + " outside vocabulary");
  }
  return lookup(yenc_embed_, t);
}

Var SecondPassNet::intermediate_embed_distribution(Var dist) const {
  Var bos = graph_->constant(Tensor(1, 1));
  return matmul(concat_cols({bos, dist}), yenc_embed_);
}

Var SecondPassNet::with_extras(Var embedded, const IntermediateFeatures& f, int position) const {
  if (!config_.intermediate_extras) return embedded;
  if (!f.has_extras()) {
    throw ContractViolation("intermediate extras are enabled but the first-pass features carry none");
  }
  const int d = config_.width;
  Tensor s(1, d), c(1, d);
  for (int j = 0; j < d; ++j) {
    s[j] = f.states(position, j);
    c[j] = f.contexts(position, j);
  }
  return concat_cols({embedded, graph_->constant(std::move(s)), graph_->constant(std::move(c))});
}

AttentionMemory SecondPassNet::encode_intermediate(const IntermediateFeatures& f) const {
  f.validate(config_.vocab(), config_.width);
  std::vector<Var> rows;
  rows.reserve(f.tokens.size());
  for (std::size_t l = 0; l < f.tokens.size(); ++l) {
    rows.push_back(with_extras(intermediate_embed(f.tokens[l]), f, static_cast<int>(l)));
  }
  return encode_intermediate_rows(rows);
}

AttentionMemory SecondPassNet::encode_intermediate_rows(std::span<const Var> rows) const {
  if (rows.empty()) throw ContractViolation("empty first-pass output; materialize it as [EOS]");
  return atty_.memory(yenc_.run(rows));
}

DecoderCarry SecondPassNet::start() const {
  const int d = config_.width;
  return {graph_->constant(Tensor(1, d)), graph_->constant(Tensor(1, 2 * d))};
}

Var SecondPassNet::embed(Token t) const {
  if (!config_.vocab().contains(t)) {
    throw ContractViolation("token id " + std::to_string(t) + " outside vocabulary");
  }
  return lookup(dec_embed_, t);
}

SecondPassNet::Step SecondPassNet::step(const DecoderCarry& carry, Var input,
                                        const AttentionMemory& mem_x,
                                        const AttentionMemory& mem_y) const {
  Var in = config_.context_in_state ? concat_cols({input, carry.context}) : input;
  Var s = dec_.step(in, carry.state);
  Attended ax = attx_.attend(mem_x, s);
  Attended ay = atty_.attend(mem_y, s);
  Var logits = add(matmul(concat_cols({s, ax.context, ay.context}), out_W_), out_b_);
  return {{s, concat_cols({ax.context, ay.context})}, ax, ay, logits, log_softmax(logits)};
}

StepResult SecondPassStepModel::step(const DecoderCarry& carry, Token prev) {
  SecondPassNet::Step s = net_.step(carry, net_.embed(prev), mem_x_, mem_y_);
  return {s.carry, s.log_probs, s.x.context, {s.x.alpha, s.y.alpha}};
}

ScoredSecondPass score_second_pass(const SecondPassNet& net, const AttentionMemory& mem_x,
                                   const AttentionMemory& mem_y, std::span<const Token> y) {
  check_reference(y, net.config().vocab());
  ScoredSecondPass out;
  DecoderCarry carry = net.start();
  Token prev = Vocab::bos;
  for (Token tok : y) {
    SecondPassNet::Step s = net.step(carry, net.embed(prev), mem_x, mem_y);
    carry = s.carry;
    out.step_lp.push_back(pick(s.log_probs, Vocab::output_index(tok)));
    out.log_probs.push_back(s.log_probs);
    out.alphas_x.push_back(s.x.alpha);
    out.alphas_y.push_back(s.y.alpha);
    prev = tok;
  }
  out.total = sum(concat_cols(out.step_lp));
  return out;
}

SecondPassStepValues second_pass_step(const Tensor& s_prev, Token prev, const Tensor& h_x,
                                      const Tensor& h_y, const SecondPassParams& params,
                                      const Tensor* c_prev) {
  const int d = params.config.width;
  if (h_x.empty() || h_y.empty()) {
    throw ContractViolation("second_pass_step: empty encoder states (h_x " + h_x.shape_string() +
                            ", h_y " + h_y.shape_string() + ")");
  }
  if (s_prev.rows() != 1 || s_prev.cols() != d || h_x.cols() != d || h_y.cols() != d) {
    throw ContractViolation("second_pass_step: widths do not match d=" + std::to_string(d));
  }
  Graph g;
  SecondPassNet net(g, params);
  AdditiveAttention attx = AdditiveAttention::bind(g, params.table, "attx", kSecondPassGroup);
  AdditiveAttention atty = AdditiveAttention::bind(g, params.table, "atty", kSecondPassGroup);
  DecoderCarry carry{g.constant(s_prev), g.constant(c_prev ? *c_prev : Tensor(1, 2 * d))};
  SecondPassNet::Step s =
      net.step(carry, net.embed(prev), attx.memory(g.constant(h_x)), atty.memory(g.constant(h_y)));
  return {s.carry.state.value(), s.x.alpha.value(), s.y.alpha.value(),
          s.x.context.value(), s.y.context.value(), s.logits.value()};
}

SecondPassScore second_pass_logprob(std::span<const Token> x, const IntermediateFeatures& first,
                                    std::span<const Token> y, const SecondPassParams& params) {
  Graph g;
  SecondPassNet net(g, params);
  ScoredSecondPass s = score_second_pass(net, net.encode_input(x), net.encode_intermediate(first), y);
  SecondPassScore out;
  out.total = s.total.value().item();
  const int T = static_cast<int>(y.size());
  const int L = s.alphas_x.front().value().cols(), Ty = s.alphas_y.front().value().cols();
  out.attention_x = Tensor(T, L);
  out.attention_y = Tensor(T, Ty);
  for (int t = 0; t < T; ++t) {
    out.per_step.push_back(s.step_lp[t].value().item());
    for (int l = 0; l < L; ++l) out.attention_x(t, l) = s.alphas_x[t].value()[l];
    for (int l = 0; l < Ty; ++l) out.attention_y(t, l) = s.alphas_y[t].value()[l];
  }
  return out;
}

TwoPassOutput two_pass_generate(std::span<const Token> x, const DelibModel& model,
                                const DecodeMode& mode, int max_len, std::uint64_t seed) {
  TwoPassOutput out;
  out.first = generate(x, model.first, mode, max_len, Rng::mix(seed, 1));
  Graph g;
  SecondPassNet net(g, model.second);
  SecondPassStepModel step_model(net, net.encode_input(x),
                                 net.encode_intermediate(IntermediateFeatures::from_generation(out.first)));
  out.second = decode(step_model, mode, max_len, Rng::mix(seed, 2));
  return out;
}

}  // namespace delib
