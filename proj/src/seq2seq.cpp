#include "delib/seq2seq.hpp"

namespace delib {

void ModelConfig::validate() const {
  Vocab v(vocab_size);
  (void)v;
  if (width < 1) throw ContractViolation("model width must be >= 1, got " + std::to_string(width));
  if (!(init_bound >= 0.0)) throw ContractViolation("init_bound must be >= 0");
}

bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }

void make_point_mass(FirstPassParams& params, Token token, double margin) {
  const Vocab v = params.config.vocab();
  if (!v.contains(token) || token == Vocab::bos) {
    throw ContractViolation("point mass needs an output token, got " + std::to_string(token));
  }
  params.table.at("out.W").fill(0.0);
  Tensor& b = params.table.at("out.b");
  b.fill(0.0);
  b[Vocab::output_index(token)] = margin;
}

FirstPassParams FirstPassParams::zeros(const ModelConfig& config) {
  config.validate();
  const int V = config.vocab_size, d = config.width;
  FirstPassParams p{config, {}};
  p.table.add("enc.embed", Tensor(V, d));
  GruCell::declare(p.table, "enc.gru", d, d);
  p.table.add("dec.embed", Tensor(V, d));
  GruCell::declare(p.table, "dec.gru", config.context_in_state ? 2 * d : d, d);
  AdditiveAttention::declare(p.table, "att", d, d, d);
  p.table.add("out.W", Tensor(2 * d, V - 1));
  p.table.add("out.b", Tensor(1, V - 1));
  return p;
}

FirstPassParams FirstPassParams::create(const ModelConfig& config, std::uint64_t seed) {
  FirstPassParams p = zeros(config);
  Rng rng = Rng::derive(seed, {1});
  initialize_uniform(p.table, rng, config.init_bound);
  return p;
}

Var encode_tokens(Var embed, const GruCell& cell, std::span<const Token> x) {
  std::vector<Var> inputs;
  inputs.reserve(x.size());
  for (Token t : x) inputs.push_back(lookup(embed, t));
  return cell.run(inputs);
}

FirstPassNet::FirstPassNet(Graph& g, const FirstPassParams& params, int group)
    : graph_(&g), config_(params.config) {
  const ParameterTable& t = params.table;
  enc_embed_ = bind_param(g, t, "enc.embed", group);
  enc_ = GruCell::bind(g, t, "enc.gru", group);
  dec_embed_ = bind_param(g, t, "dec.embed", group);
  dec_ = GruCell::bind(g, t, "dec.gru", group);
  att_ = AdditiveAttention::bind(g, t, "att", group);
  out_W_ = bind_param(g, t, "out.W", group);
  out_b_ = bind_param(g, t, "out.b", group);
}

AttentionMemory FirstPassNet::encode(std::span<const Token> x) const {
  check_input_tokens(x, config_.vocab());
  return att_.memory(encode_tokens(enc_embed_, enc_, x));
}

DecoderCarry FirstPassNet::start() const {
  Var zero = graph_->constant(Tensor(1, config_.width));
  return {zero, zero};
}

Var FirstPassNet::embed(Token t) const {
  if (!config_.vocab().contains(t)) {
    throw ContractViolation("token id " + std::to_string(t) + " outside vocabulary");
  }
  return lookup(dec_embed_, t);
}

Var FirstPassNet::embed_distribution(Var dist) const {
  Var bos = graph_->constant(Tensor(1, 1));
  return matmul(concat_cols({bos, dist}), dec_embed_);
}

FirstPassNet::Step FirstPassNet::step(const DecoderCarry& carry, Var input,
                                      const AttentionMemory& mem) const {
  Var x = config_.context_in_state ? concat_cols({input, carry.context}) : input;
  Var s = dec_.step(x, carry.state);
  Attended a = att_.attend(mem, s);
  Var logits = add(matmul(concat_cols({s, a.context}), out_W_), out_b_);
  return {{s, a.context}, a, logits, log_softmax(logits)};
}

StepResult FirstPassStepModel::step(const DecoderCarry& carry, Token prev) {
  FirstPassNet::Step s = net_.step(carry, net_.embed(prev), mem_);
  return {s.carry, s.log_probs, s.attended.context, {s.attended.alpha}};
}

void check_reference(std::span<const Token> y, const Vocab& vocab) {
  check_token_seq(y, vocab, std::max<int>(1, static_cast<int>(y.size())));
}

ScoredSequence score_first_pass(const FirstPassNet& net, const AttentionMemory& mem,
                                std::span<const Token> y) {
  check_reference(y, net.config().vocab());
  ScoredSequence out;
  DecoderCarry carry = net.start();
  Token prev = Vocab::bos;
  for (Token tok : y) {
    FirstPassNet::Step s = net.step(carry, net.embed(prev), mem);
    carry = s.carry;
    out.step_lp.push_back(pick(s.log_probs, Vocab::output_index(tok)));
    out.log_probs.push_back(s.log_probs);
    out.alphas.push_back(s.attended.alpha);
    out.states.push_back(s.carry.state);
    out.contexts.push_back(s.attended.context);
    prev = tok;
  }
  out.total = sum(concat_cols(out.step_lp));
  return out;
}

Tensor encode(std::span<const Token> x, const FirstPassParams& params) {
  Graph g;
  FirstPassNet net(g, params);
  return net.encode(x).states.value();
}

DecodeStepValues decode_step(const Tensor& s_prev, Token prev, const Tensor& h,
                             const FirstPassParams& params, const Tensor* c_prev) {
  const int d = params.config.width;
  if (h.empty() || h.rows() < 1) throw ContractViolation("decode_step: empty encoder states");
  if (s_prev.rows() != 1 || s_prev.cols() != d || h.cols() != d) {
    throw ContractViolation("decode_step: state " + s_prev.shape_string() + " / encoder " +
                            h.shape_string() + " do not match width " + std::to_string(d));
  }
  Graph g;
  FirstPassNet net(g, params);
  DecoderCarry carry{g.constant(s_prev), g.constant(c_prev ? *c_prev : Tensor(1, d))};
  FirstPassNet::Step s = net.step(carry, net.embed(prev), net.memory(g.constant(h)));
  return {s.carry.state.value(), s.attended.alpha.value(), s.attended.context.value(),
          s.logits.value()};
}

SequenceScore teacher_forced_logprob(std::span<const Token> x, std::span<const Token> y,
                                     const FirstPassParams& params) {
  Graph g;
  FirstPassNet net(g, params);
  ScoredSequence s = score_first_pass(net, net.encode(x), y);
  SequenceScore out;
  out.total = s.total.value().item();
  const int L = s.alphas.front().value().cols();
  out.attention = Tensor(static_cast<int>(y.size()), L);
  for (std::size_t t = 0; t < y.size(); ++t) {
    out.per_step.push_back(s.step_lp[t].value().item());
    for (int l = 0; l < L; ++l) out.attention(static_cast<int>(t), l) = s.alphas[t].value()(0, l);
  }
  return out;
}

Generation generate(std::span<const Token> x, const FirstPassParams& params,
                    const DecodeMode& mode, int max_len, std::uint64_t seed) {
  Graph g;
  FirstPassNet net(g, params);
  FirstPassStepModel model(net, x);
  return decode(model, mode, max_len, seed);
}

std::vector<Generation> nbest(std::span<const Token> x, const FirstPassParams& params, int width,
                              int max_len) {
  Graph g;
  FirstPassNet net(g, params);
  FirstPassStepModel model(net, x);
  return decode_beam(model, max_len, width);
}

}  // namespace delib
