#include "cgsa/cgsc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cgsa/hungarian.hpp"
#include "cgsa/numeric.hpp"

namespace cgsa {

PrototypeMemory PrototypeMemory::create(std::size_t num_classes,
                                        std::size_t dim, double beta,
                                        double tau) {
  if (beta < 0.0 || beta >= 1.0)
    throw std::invalid_argument("PrototypeMemory: beta must be in [0, 1)");
  if (tau <= 0.0)
    throw std::invalid_argument("PrototypeMemory: tau must be > 0");
  PrototypeMemory m;
  m.num_classes = num_classes;
  m.dim = dim;
  m.beta = beta;
  m.tau = tau;
  m.prototypes = Tensor(num_classes, dim);
  m.initialized.assign(num_classes, false);
  return m;
}

std::vector<double> PrototypeMemory::prototype(std::size_t class_id) const {
  if (class_id < 1 || class_id > num_classes)
    throw std::invalid_argument("PrototypeMemory: class id out of range");
  std::vector<double> out(dim);
  for (std::size_t j = 0; j < dim; ++j) out[j] = prototypes.at(class_id - 1, j);
  return out;
}

std::vector<double> PrototypeMemory::norms() const {
  std::vector<double> out(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j)
      s += prototypes.at(c, j) * prototypes.at(c, j);
    out[c] = std::sqrt(s);
  }
  return out;
}

void update_prototype_memory(PrototypeMemory& memory,
                             const Tensor& query_embeddings,
                             const std::vector<QueryInfo>& info) {
  if (query_embeddings.rows() != info.size())
    throw std::invalid_argument("update_prototype_memory: size mismatch");
  if (query_embeddings.cols() != memory.dim)
    throw std::invalid_argument("update_prototype_memory: dim mismatch");
  for (std::size_t c = 1; c <= memory.num_classes; ++c) {
    std::vector<double> mean(memory.dim, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < info.size(); ++i) {
      if (info[i].background || info[i].fg_class != static_cast<int>(c))
        continue;
      for (std::size_t j = 0; j < memory.dim; ++j)
        mean[j] += query_embeddings.at(i, j);
      ++count;
    }
    if (count == 0) continue;  // classes absent this batch stay unchanged
    for (auto& v : mean) v /= static_cast<double>(count);
    if (!memory.initialized[c - 1]) {
      for (std::size_t j = 0; j < memory.dim; ++j)
        memory.prototypes.at(c - 1, j) = mean[j];
      memory.initialized[c - 1] = true;
    } else {
      for (std::size_t j = 0; j < memory.dim; ++j)
        memory.prototypes.at(c - 1, j) =
            memory.beta * memory.prototypes.at(c - 1, j) +
            (1.0 - memory.beta) * mean[j];
    }
  }
}

WeightedSlotSet weighted_slots(Tape& tape, Var weights, Var features) {
  const Tensor& w = tape.value(weights);
  const Tensor& h = tape.value(features);
  if (w.cols() != h.rows())
    throw std::invalid_argument("weighted_slots: weight/feature shape mismatch");
  for (std::size_t k = 0; k < w.rows(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.cols(); ++i) s += w.at(k, i);
    if (std::fabs(s - 1.0) > 1e-6)
      throw std::invalid_argument("weighted_slots: weights not row-stochastic");
  }
  WeightedSlotSet out;
  out.slots = tape.matmul(weights, features);
  out.count = w.rows();
  out.dim = h.cols();
  out.labels.assign(out.count, 0);
  return out;
}

void assign_slot_labels(Tape& tape, WeightedSlotSet& slots,
                        const Tensor& query_embeddings,
                        const std::vector<QueryInfo>& info) {
  const Tensor& z = tape.value(slots.slots);
  const std::size_t k = slots.count, m = query_embeddings.rows();
  if (query_embeddings.cols() != slots.dim)
    throw std::invalid_argument("assign_slot_labels: dim mismatch (d != d_q)");
  if (k > m)
    throw std::invalid_argument("assign_slot_labels: more slots than queries");
  Tensor sim(k, m);
  std::vector<double> zr(slots.dim), qr(slots.dim);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t j = 0; j < slots.dim; ++j) zr[j] = z.at(a, j);
    for (std::size_t b = 0; b < m; ++b) {
      for (std::size_t j = 0; j < slots.dim; ++j)
        qr[j] = query_embeddings.at(b, j);
      sim.at(a, b) = cosine_similarity_or_zero(zr, qr);
    }
  }
  Assignment assign = hungarian_assign(sim);
  for (std::size_t a = 0; a < k; ++a) {
    const QueryInfo& qi = info[assign.column_of_row[a]];
    slots.labels[a] = qi.background ? 0 : qi.fg_class;
  }
}

std::map<int, Var> slot_class_prototypes(Tape& tape,
                                         const WeightedSlotSet& slots) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t k = 0; k < slots.count; ++k) {
    if (slots.labels[k] > 0) by_class[slots.labels[k]].push_back(k);
  }
  std::map<int, Var> out;
  for (const auto& [cls, idxs] : by_class) {
    Var rows = tape.select_rows(slots.slots, idxs);
    out[cls] = tape.scale(tape.sum_cols(rows), 1.0 / idxs.size());
  }
  return out;
}

namespace {
// Exact cosine between a constant prototype and a tape vector.
Var cosine_tape(Tape& t, const std::vector<double>& proto, Var vec) {
  double pn = norm2(proto);
  if (pn == 0.0)
    throw std::invalid_argument("slot_contrast_loss: zero-norm prototype");
  const Tensor& v = t.value(vec);
  double vn = 0.0;
  for (double x : v.data) vn += x * x;
  if (vn == 0.0)
    throw std::invalid_argument("slot_contrast_loss: zero-norm slot prototype");
  Var pv = t.constant(Tensor(std::vector<double>(proto)));
  Var num = t.dot(pv, vec);
  Var den = t.scale(t.sqrt(t.dot(vec, vec)), pn);
  return t.div(num, den);
}
}  // namespace

ContrastLossResult slot_contrast_loss(Tape& tape,
                                      const PrototypeMemory& memory,
                                      const std::map<int, Var>& slot_protos) {
  ContrastLossResult res;
  std::vector<int> active;
  for (const auto& [cls, var] : slot_protos) {
    if (cls >= 1 && static_cast<std::size_t>(cls) <= memory.num_classes &&
        memory.initialized[cls - 1])
      active.push_back(cls);
  }
  res.active_classes = active.size();
  if (active.empty()) {
    res.loss = tape.constant_scalar(0.0);
    res.skipped = true;
    return res;
  }
  if (active.size() == 1) {
    // Softmax denominator collapses with one class; pure alignment instead.
    res.single_class_mode = true;
    int c = active[0];
    res.loss = tape.neg(cosine_tape(tape, memory.prototype(c),
                                    slot_protos.at(c)));
    return res;
  }

  const double inv_tau = 1.0 / memory.tau;
  Var total = tape.constant_scalar(0.0);
  for (int c : active) {
    std::vector<double> anchor = memory.prototype(c);
    Var pos;
    std::vector<Var> scaled;
    scaled.reserve(active.size());
    for (int c2 : active) {
      Var s = tape.scale(cosine_tape(tape, anchor, slot_protos.at(c2)), inv_tau);
      if (c2 == c) pos = s;
      scaled.push_back(s);
    }
    // -s_pos/tau + logsumexp over the row; exponents are bounded by 1/tau.
    double mx = tape.scalar(scaled[0]);
    for (Var s : scaled) mx = std::max(mx, tape.scalar(s));
    Var denom = tape.constant_scalar(0.0);
    for (Var s : scaled)
      denom = tape.add(denom, tape.exp(tape.add_scalar(s, -mx)));
    Var lse = tape.add_scalar(tape.log(denom), mx);
    total = tape.add(total, tape.sub(lse, pos));
  }
  res.loss = tape.scale(total, 1.0 / static_cast<double>(active.size()));
  return res;
}

}  // namespace cgsa
