#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "evssm/rng.hpp"

namespace evssm {

struct Event {
  std::uint64_t t_us = 0;   // microseconds since stream start
  std::uint32_t channel = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

// Either a hard class index or a soft distribution over classes.
class Label {
 public:
  Label() = default;
  static Label hard(int cls);
  static Label soft(std::vector<double> probs);  // validates sum == 1 within 1e-6

  bool is_soft() const { return !probs_.empty(); }
  // argmax for soft labels, lowest index wins ties
  int hard_class() const;
  const std::vector<double>& probs() const { return probs_; }

  friend bool operator==(const Label&, const Label&) = default;

 private:
  int cls_ = -1;
  std::vector<double> probs_;
};

struct EventStream {
  std::vector<Event> events;
  std::uint32_t num_channels = 0;
  Label label;

  // throws on: channel out of range, decreasing timestamps, num_channels == 0
  void validate() const;
  std::uint64_t duration_us() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

// Per-event time gaps in configurable units. deltas[0] = 0 (the first event
// has no predecessor); deltas[m] = (t_m - t_{m-1}) * time_unit.
struct DeltaSequence {
  std::vector<double> deltas;
  std::vector<std::uint32_t> channels;
};

EventStream parse_event_stream(std::string_view text);
std::string write_event_stream(const EventStream& s);

DeltaSequence compute_deltas(const EventStream& s, double time_unit);

struct AugmentConfig {
  double drop_prob = 0.0;          // independent per-event drop
  std::int64_t time_jitter_us = 0; // uniform integer in [-j, j], clamped to t >= 0
  std::int32_t channel_jitter = 0; // uniform integer in [-j, j], clamped to [0, J)
  double cutmix_prob = 0.0;        // per-sample chance of mixing in a batch partner
};

// Cuts a contiguous time window out of `a` and splices in events from an
// equally long window of `b`, shifted to the cut position. The result label
// is soft with weights proportional to the surviving event counts from each
// source. Requires a.num_channels == b.num_channels.
EventStream cutmix(const EventStream& a, const EventStream& b, Rng& rng);

EventStream augment_jitter_drop(const EventStream& s, const AugmentConfig& cfg, Rng& rng);

// Uniformly chosen contiguous run of at most max_events events.
EventStream slice_events(const EventStream& s, std::size_t max_events, Rng& rng);

template <typename T>
struct Batch {
  int rows = 0;
  int max_len = 0;
  int num_classes = 0;
  std::vector<std::uint32_t> channels;  // rows * max_len
  std::vector<T> deltas;                // rows * max_len
  std::vector<std::uint8_t> mask;       // rows * max_len, valid prefix per row
  std::vector<T> labels;                // rows * num_classes, soft rows
  std::vector<int> lengths;             // valid events per row
};

template <typename T>
Batch<T> batch_pad(const std::vector<const EventStream*>& streams, double time_unit,
                   int num_classes);

struct Dataset {
  std::vector<EventStream> train, valid, test;
};

// Manifest format: one entry per line, `path split class`, with paths
// relative to the manifest location and split in {train, valid, test}.
Dataset load_dataset(const std::filesystem::path& manifest);
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

struct ClassStats {
  int cls = 0;
  std::size_t samples = 0;
  std::size_t min_events = 0, max_events = 0;
  double median_events = 0;
};
struct SplitStats {
  std::string split;
  std::size_t samples = 0;
  std::size_t min_events = 0, max_events = 0;
  double median_events = 0;
  std::vector<ClassStats> per_class;
};
struct InspectReport {
  std::uint32_t num_channels = 0;
  int num_classes = 0;
  std::vector<SplitStats> splits;
};
InspectReport inspect_dataset(const Dataset& ds);

// Flattening used when converting camera events with polarity to flat
// channel indices: (y * 128 + x) * 2 + polarity on a 128x128 sensor.
constexpr std::uint32_t dvs_channel(std::uint32_t x, std::uint32_t y, std::uint32_t polarity) {
  return (y * 128u + x) * 2u + polarity;
}

}  // namespace evssm
