#include "cgsa/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgsa {

// ---- threshold schedules ----

void ThresholdSchedule::validate() const {
  if (!(tau_min > 0.0 && tau_min < 1.0) || !(tau_max > 0.0 && tau_max < 1.0))
    throw std::invalid_argument("schedule: tau bounds must be in (0, 1)");
  if (tau_min > tau_max)
    throw std::invalid_argument("schedule: tau_min must be <= tau_max");
  if (total_steps == 0)
    throw std::invalid_argument("schedule: total steps must be positive");
}

double ThresholdSchedule::at(double s) const {
  if (s < 0.0 || s > static_cast<double>(total_steps))
    throw std::invalid_argument("schedule: step outside [0, S]");
  const double span = tau_max - tau_min;
  switch (kind) {
    case ScheduleKind::Fixed:
      return tau_fix;
    case ScheduleKind::Cosine:
      return tau_min +
             span * (1.0 + std::cos(M_PI * s / static_cast<double>(total_steps))) / 2.0;
    case ScheduleKind::Exponential:
      return tau_min + span * std::exp(-beta_exp * s);
    case ScheduleKind::Sigmoid: {
      double x = k_sig * (s / static_cast<double>(total_steps) - 0.5);
      return tau_min + span / (1.0 + std::exp(-x));
    }
  }
  throw std::logic_error("schedule: unknown kind");
}

std::vector<Target> filter_pseudo_labels(const std::vector<Detection>& dets,
                                         double tau) {
  std::vector<Target> out;
  for (const auto& d : dets) {
    if (d.confidence >= tau) out.push_back(Target{d.box, d.class_id});
  }
  return out;
}

// ---- model ----

Model::Model(const RunConfig& config) : config_(config), detector_([&] {
  DetectorConfig d;
  d.image_size = RunConfig::kImageSize;
  d.patch = config.patch;
  d.dim = config.dim;
  d.num_queries = config.m_queries;
  d.num_classes = config.num_classes();
  return d;
}()) {
  config_.validate();
  if (config_.use_hsa) hsa_.emplace(config_.hsa_config());
}

void Model::register_params(ParameterStore& store, Rng& rng) const {
  detector_.register_params(store, rng);
  if (hsa_) {
    hsa_->register_params(store, rng);
    const std::size_t k = config_.fine_slots();
    register_fusion_params(store, rng, config_.dim, config_.m_queries / k,
                           config_.dim);
    if (!config_.learn_slot_init) {
      for (const auto& name : store.names()) {
        if (name.find(".init.") != std::string::npos) store.freeze(name);
      }
    }
  }
}

Model::Forward Model::forward(Tape& tape,
                              const std::map<std::string, Var>& bound,
                              const ImageU8& image, Rng& rng,
                              bool light) const {
  Forward out;
  out.features = detector_.encode_image(tape, bound, image);
  Var queries = detector_.object_queries(bound);
  if (hsa_) {
    out.hsa = hsa_->decompose(tape, bound, out.features, rng, light);
    queries = fuse_slot_queries(tape, bound, queries, out.hsa->fine);
  }
  out.queries = detector_.detect(tape, bound, out.features, queries);
  return out;
}

// ---- training steps ----

void teacher_ema_update(AdaptState& state, double gamma) {
  state.teacher.ema_from(state.student, gamma);
}

namespace {

// Token encoder, slot modules and the fusion mapper form the slow group.
std::function<double(const std::string&)> lr_groups(const RunConfig& cfg) {
  const double scale = cfg.hsa_lr_scale;
  return [scale](const std::string& name) {
    if (name.rfind("hsa.", 0) == 0 || name.rfind("fuse.", 0) == 0 ||
        name.rfind("det.patch.", 0) == 0)
      return scale;
    return 1.0;
  };
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void pool_kappa(StepStats& stats, std::vector<double>& all_kappa) {
  if (all_kappa.empty()) return;
  stats.kappa_min = *std::min_element(all_kappa.begin(), all_kappa.end());
  stats.kappa_max = *std::max_element(all_kappa.begin(), all_kappa.end());
  stats.kappa_mean = mean_of(all_kappa);
}

}  // namespace

StepStats pretrain_step(const Model& model, ParameterStore& store, Rng& rng,
                        const std::vector<const Scene*>& batch) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  const RunConfig& cfg = model.config();
  Tape tape;
  auto bound = store.bind(tape);
  Var total = tape.constant_scalar(0.0);
  StepStats stats;
  std::vector<double> all_kappa;
  for (const Scene* scene : batch) {
    auto fwd = model.forward(tape, bound, scene->image, rng, false);
    auto det = detection_loss(tape, fwd.queries, scene->ground_truth,
                              cfg.lambda_l1, cfg.lambda_giou);
    Var term = det.loss;
    stats.det += tape.scalar(det.loss);
    if (fwd.hsa) {
      Var rec = model.hsa().rec_loss(tape, *fwd.hsa);
      stats.rec += tape.scalar(rec);
      stats.rec1 += tape.scalar(fwd.hsa->loss1);
      stats.rec2 += tape.scalar(fwd.hsa->loss2);
      term = tape.add(term, tape.scale(rec, cfg.lambda_rec));
      auto kr = kappa_report(tape.value(fwd.hsa->weights));
      all_kappa.insert(all_kappa.end(), kr.kappa.begin(), kr.kappa.end());
    }
    total = tape.add(total, term);
  }
  total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
  stats.total = tape.scalar(total);
  const double inv = 1.0 / static_cast<double>(batch.size());
  stats.det *= inv;
  stats.rec *= inv;
  stats.rec1 *= inv;
  stats.rec2 *= inv;
  pool_kappa(stats, all_kappa);
  tape.backward(total);
  store.apply_sgd(tape, bound, cfg.lr, lr_groups(cfg));
  return stats;
}

StepStats adapt_step(const Model& model, AdaptState& state,
                     const std::vector<const Scene*>& batch,
                     const ThresholdSchedule& schedule) {
  if (batch.empty()) throw std::invalid_argument("adapt_step: empty batch");
  if (!model.uses_hsa())
    throw std::invalid_argument("adapt_step: adaptation requires the HSA path");
  const RunConfig& cfg = model.config();
  StepStats stats;

  if (state.step < cfg.burn_in) {
    // Teacher-free warmup on the reconstruction objective only.
    stats.burn_in = true;
    stats.tau = schedule.at(0.0);
    Tape tape;
    auto bound = state.student.bind(tape);
    Var total = tape.constant_scalar(0.0);
    std::vector<double> all_kappa;
    for (const Scene* scene : batch) {
      auto fwd = model.forward(tape, bound, scene->image, state.rng, false);
      Var rec = model.hsa().rec_loss(tape, *fwd.hsa);
      stats.rec += tape.scalar(rec);
      stats.rec1 += tape.scalar(fwd.hsa->loss1);
      stats.rec2 += tape.scalar(fwd.hsa->loss2);
      total = tape.add(total, tape.scale(rec, cfg.lambda_rec));
      auto kr = kappa_report(tape.value(fwd.hsa->weights));
      all_kappa.insert(all_kappa.end(), kr.kappa.begin(), kr.kappa.end());
    }
    total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
    stats.total = tape.scalar(total);
    const double inv = 1.0 / static_cast<double>(batch.size());
    stats.rec *= inv;
    stats.rec1 *= inv;
    stats.rec2 *= inv;
    pool_kappa(stats, all_kappa);
    tape.backward(total);
    state.student.apply_sgd(tape, bound, cfg.lr, lr_groups(cfg));
    state.step += 1;
    state.trace_rec.push_back(stats.rec);
    return stats;
  }

  const double s = static_cast<double>(state.step - cfg.burn_in);
  stats.tau = schedule.at(s);

  Tape tape;
  auto student_bound = state.student.bind(tape);
  // The teacher only produces pseudo labels; no gradients flow through it.
  auto teacher_bound = state.teacher.bind_const(tape);

  Var total = tape.constant_scalar(0.0);
  std::vector<double> all_kappa;
  Tensor batch_queries(0, 0);
  std::vector<QueryInfo> batch_infos;
  std::vector<std::map<int, Var>> per_image_protos;
  std::vector<LabeledEmbedding> labeled_slots;

  for (const Scene* scene : batch) {
    auto teacher_fwd =
        model.forward(tape, teacher_bound, scene->image, state.rng, true);
    auto pseudo = filter_pseudo_labels(
        extract_detections(tape, teacher_fwd.queries), stats.tau);
    stats.pseudo_count += pseudo.size();

    auto fwd = model.forward(tape, student_bound, scene->image, state.rng, false);
    Var term = tape.constant_scalar(0.0);
    if (pseudo.empty()) {
      // No confident teacher detections: skip the detection term entirely.
      stats.skipped_unsup += 1;
    } else {
      auto det = detection_loss(tape, fwd.queries, pseudo, cfg.lambda_l1,
                                cfg.lambda_giou);
      stats.det += tape.scalar(det.loss);
      term = tape.add(term, det.loss);
    }
    Var rec = model.hsa().rec_loss(tape, *fwd.hsa);
    stats.rec += tape.scalar(rec);
    stats.rec1 += tape.scalar(fwd.hsa->loss1);
    stats.rec2 += tape.scalar(fwd.hsa->loss2);
    term = tape.add(term, tape.scale(rec, cfg.lambda_rec));

    auto kr = kappa_report(tape.value(fwd.hsa->weights));
    all_kappa.insert(all_kappa.end(), kr.kappa.begin(), kr.kappa.end());

    // Weighted slots, slot labels and per-image slot prototypes.
    WeightedSlotSet slots =
        weighted_slots(tape, fwd.hsa->weights, fwd.features.tokens);
    auto infos = summarize_queries(tape, fwd.queries);
    const Tensor& query_values = tape.value(fwd.queries.queries);
    assign_slot_labels(tape, slots, query_values, infos);
    per_image_protos.push_back(slot_class_prototypes(tape, slots));

    const Tensor& slot_values = tape.value(slots.slots);
    for (std::size_t k = 0; k < slots.count; ++k) {
      if (slots.labels[k] <= 0) continue;
      LabeledEmbedding e;
      e.class_id = slots.labels[k];
      e.values.assign(slot_values.data.begin() + k * slots.dim,
                      slot_values.data.begin() + (k + 1) * slots.dim);
      labeled_slots.push_back(std::move(e));
    }

    // Pool query embeddings for the one prototype-memory update per step.
    if (batch_queries.numel() == 0) {
      batch_queries = query_values;
    } else {
      Tensor merged(batch_queries.rows() + query_values.rows(),
                    query_values.cols());
      std::copy(batch_queries.data.begin(), batch_queries.data.end(),
                merged.data.begin());
      std::copy(query_values.data.begin(), query_values.data.end(),
                merged.data.begin() + batch_queries.numel());
      batch_queries = std::move(merged);
    }
    batch_infos.insert(batch_infos.end(), infos.begin(), infos.end());

    total = tape.add(total, term);
  }

  // Single prototype-memory write per step, then the contrast terms read the
  // updated snapshot.
  update_prototype_memory(state.memory, batch_queries, batch_infos);
  for (const auto& protos : per_image_protos) {
    auto con = slot_contrast_loss(tape, state.memory, protos);
    stats.con += tape.scalar(con.loss);
    total = tape.add(total, tape.scale(con.loss, cfg.lambda_con));
  }

  total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
  stats.total = tape.scalar(total);
  const double inv = 1.0 / static_cast<double>(batch.size());
  stats.det *= inv;
  stats.rec *= inv;
  stats.rec1 *= inv;
  stats.rec2 *= inv;
  stats.con *= inv;
  pool_kappa(stats, all_kappa);

  tape.backward(total);
  state.student.apply_sgd(tape, student_bound, cfg.lr, lr_groups(cfg));
  teacher_ema_update(state, cfg.teacher_gamma);

  auto margin = margin_gain(state.memory.prototypes, state.memory.initialized,
                            labeled_slots);
  stats.margin_valid = margin.classes_used > 0;
  stats.margin_delta = margin.delta;

  state.step += 1;
  state.trace_rec.push_back(stats.rec);
  if (stats.margin_valid) state.trace_delta.push_back(stats.margin_delta);
  return stats;
}

}  // namespace cgsa
