#pragma once

// Internal JSON mappings shared by the config loader and the checkpoint
// meta block. Not installed.

#include <json.hpp>

#include "evssm/config.hpp"

namespace evssm::detail {

using nlohmann::json;

inline json model_to_json(const ModelConfig& m) {
  return json{{"num_layers", m.num_layers},
              {"state_size", m.state_size},
              {"model_width", m.model_width},
              {"num_channels", m.num_channels},
              {"num_classes", m.num_classes},
              {"pool", m.pool},
              {"width_mult", m.width_mult},
              {"mode", m.mode},
              {"dropout", m.dropout},
              {"gate_variant", m.gate_variant},
              {"timescale_min", m.timescale_min},
              {"timescale_max", m.timescale_max},
              {"use_scan", m.use_scan},
              {"scan_chunk", m.scan_chunk},
              {"norm_eps", m.norm_eps}};
}

inline void model_from_json(const json& j, ModelConfig* m) {
  j.at("num_layers").get_to(m->num_layers);
  j.at("state_size").get_to(m->state_size);
  j.at("model_width").get_to(m->model_width);
  j.at("num_channels").get_to(m->num_channels);
  j.at("num_classes").get_to(m->num_classes);
  j.at("pool").get_to(m->pool);
  j.at("width_mult").get_to(m->width_mult);
  j.at("mode").get_to(m->mode);
  j.at("dropout").get_to(m->dropout);
  j.at("gate_variant").get_to(m->gate_variant);
  j.at("timescale_min").get_to(m->timescale_min);
  j.at("timescale_max").get_to(m->timescale_max);
  j.at("use_scan").get_to(m->use_scan);
  j.at("scan_chunk").get_to(m->scan_chunk);
  j.at("norm_eps").get_to(m->norm_eps);
}

inline json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr", t.lr},
              {"lr_floor", t.lr_floor},
              {"warmup_steps", t.warmup_steps},
              {"schedule", t.schedule},
              {"weight_decay", t.weight_decay},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"decay_dynamics", t.decay_dynamics},
              {"dynamics_lr_factor", t.dynamics_lr_factor},
              {"clip_norm", t.clip_norm},
              {"max_events", t.max_events},
              {"time_unit", t.time_unit},
              {"threads", t.threads},
              {"augment",
               json{{"drop_prob", t.augment.drop_prob},
                    {"time_jitter_us", t.augment.time_jitter_us},
                    {"channel_jitter", t.augment.channel_jitter},
                    {"cutmix_prob", t.augment.cutmix_prob}}}};
}

inline void train_from_json(const json& j, TrainConfig* t) {
  j.at("epochs").get_to(t->epochs);
  j.at("batch_size").get_to(t->batch_size);
  j.at("lr").get_to(t->lr);
  j.at("lr_floor").get_to(t->lr_floor);
  j.at("warmup_steps").get_to(t->warmup_steps);
  j.at("schedule").get_to(t->schedule);
  j.at("weight_decay").get_to(t->weight_decay);
  j.at("beta1").get_to(t->beta1);
  j.at("beta2").get_to(t->beta2);
  j.at("adam_eps").get_to(t->adam_eps);
  j.at("decay_dynamics").get_to(t->decay_dynamics);
  j.at("dynamics_lr_factor").get_to(t->dynamics_lr_factor);
  j.at("clip_norm").get_to(t->clip_norm);
  j.at("max_events").get_to(t->max_events);
  j.at("time_unit").get_to(t->time_unit);
  j.at("threads").get_to(t->threads);
  const json& a = j.at("augment");
  a.at("drop_prob").get_to(t->augment.drop_prob);
  a.at("time_jitter_us").get_to(t->augment.time_jitter_us);
  a.at("channel_jitter").get_to(t->augment.channel_jitter);
  a.at("cutmix_prob").get_to(t->augment.cutmix_prob);
}

inline json synth_to_json(const SynthConfig& s) {
  return json{{"num_channels", s.num_channels},
              {"num_classes", s.num_classes},
              {"events_per_sample", s.events_per_sample},
              {"train_per_class", s.train_per_class},
              {"test_per_class", s.test_per_class},
              {"interval_mean_us", s.interval_mean_us}};
}

inline void synth_from_json(const json& j, SynthConfig* s) {
  j.at("num_channels").get_to(s->num_channels);
  j.at("num_classes").get_to(s->num_classes);
  j.at("events_per_sample").get_to(s->events_per_sample);
  j.at("train_per_class").get_to(s->train_per_class);
  j.at("test_per_class").get_to(s->test_per_class);
  j.at("interval_mean_us").get_to(s->interval_mean_us);
}

}  // namespace evssm::detail
