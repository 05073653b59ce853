#include "evssm/events.hpp"

#include <algorithm>
#include <cerrno>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace evssm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

[[noreturn]] void fail_line(std::size_t line, const std::string& msg) {
  fail("line " + std::to_string(line) + ": " + msg);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Label Label::hard(int cls) {
  if (cls < 0) fail("hard label must be a non-negative class index");
  Label l;
  l.cls_ = cls;
  return l;
}

Label Label::soft(std::vector<double> probs) {
  if (probs.empty()) fail("soft label must not be empty");
  double sum = 0;
  for (double p : probs) {
    if (!(p >= 0.0)) fail("soft label entries must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    fail("soft label must sum to 1, got " + format_double(sum));
  }
  Label l;
  l.probs_ = std::move(probs);
  return l;
}

int Label::hard_class() const {
  if (!is_soft()) {
    if (cls_ < 0) fail("label is unset");
    return cls_;
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs_.size(); ++i) {
    if (probs_[i] > probs_[best]) best = i;
  }
  return static_cast<int>(best);
}

void EventStream::validate() const {
  if (num_channels == 0) fail("stream must declare at least one channel");
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.channel >= num_channels) {
      fail("event " + std::to_string(i) + ": channel " + std::to_string(e.channel) +
           " out of range [0, " + std::to_string(num_channels) + ")");
    }
    if (i > 0 && e.t_us < prev) {
      fail("event " + std::to_string(i) + ": timestamps must be non-decreasing");
    }
    prev = e.t_us;
  }
}

std::uint64_t EventStream::duration_us() const {
  if (events.size() < 2) return 0;
  return events.back().t_us - events.front().t_us;
}

EventStream parse_event_stream(std::string_view text) {
  EventStream s;
  std::size_t pos = 0, line_no = 0;
  bool have_header = false;
  std::uint64_t prev_t = 0;

  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    if (!have_header) {
      std::istringstream in{std::string(line)};
      std::string magic, jtok, ltok;
      in >> magic >> jtok >> ltok;
      std::string extra;
      if (in >> extra) fail_line(line_no, "unexpected token '" + extra + "' in header");
      if (magic != "#EVS1") fail_line(line_no, "expected '#EVS1' header, got '" + magic + "'");
      if (jtok.rfind("J=", 0) != 0) fail_line(line_no, "expected J=<channels> in header");
      if (ltok.rfind("label=", 0) != 0) fail_line(line_no, "expected label=<value> in header");
      try {
        unsigned long j = std::stoul(jtok.substr(2));
        if (j == 0 || j > 0xffffffffull) throw std::out_of_range("J");
        s.num_channels = static_cast<std::uint32_t>(j);
      } catch (const std::exception&) {
        fail_line(line_no, "invalid channel count '" + jtok.substr(2) + "'");
      }
      std::string lv = ltok.substr(6);
      if (lv.empty()) fail_line(line_no, "empty label value");
      if (lv.find(',') != std::string::npos || lv.find('.') != std::string::npos) {
        std::vector<double> probs;
        std::size_t p = 0;
        while (p <= lv.size()) {
          std::size_t c = lv.find(',', p);
          std::string tok = lv.substr(p, c == std::string::npos ? lv.size() - p : c - p);
          char* end = nullptr;
          double v = std::strtod(tok.c_str(), &end);
          if (tok.empty() || end != tok.c_str() + tok.size()) {
            fail_line(line_no, "invalid soft label entry '" + tok + "'");
          }
          probs.push_back(v);
          p = (c == std::string::npos) ? lv.size() + 1 : c + 1;
        }
        try {
          s.label = Label::soft(std::move(probs));
        } catch (const std::exception& e) {
          fail_line(line_no, e.what());
        }
      } else {
        char* end = nullptr;
        long v = std::strtol(lv.c_str(), &end, 10);
        if (end != lv.c_str() + lv.size() || v < 0) {
          fail_line(line_no, "invalid label '" + lv + "'");
        }
        s.label = Label::hard(static_cast<int>(v));
      }
      have_header = true;
      continue;
    }

    const char* cur = line.data();
    const char* lim = line.data() + line.size();
    char* end = nullptr;
    errno = 0;
    unsigned long long t = std::strtoull(cur, &end, 10);
    if (end == cur || errno == ERANGE) fail_line(line_no, "malformed event line");
    cur = end;
    unsigned long long ch = std::strtoull(cur, &end, 10);
    if (end == cur || errno == ERANGE) fail_line(line_no, "malformed event line");
    cur = end;
    while (cur < lim && (*cur == ' ' || *cur == '\t')) ++cur;
    if (cur != lim) fail_line(line_no, "trailing characters after event");
    if (ch >= s.num_channels) {
      fail_line(line_no, "channel " + std::to_string(ch) + " out of range [0, " +
                             std::to_string(s.num_channels) + ")");
    }
    if (!s.events.empty() && t < prev_t) {
      fail_line(line_no, "timestamps must be non-decreasing");
    }
    prev_t = t;
    s.events.push_back({t, static_cast<std::uint32_t>(ch)});
  }
  if (!have_header) fail("missing '#EVS1' header");
  return s;
}

std::string write_event_stream(const EventStream& s) {
  s.validate();
  std::string out = "#EVS1 J=" + std::to_string(s.num_channels) + " label=";
  if (s.label.is_soft()) {
    const auto& p = s.label.probs();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (i) out += ',';
      std::string v = format_double(p[i]);
      // keep a float marker so a bare integer-valued entry reads back as soft
      if (v.find('.') == std::string::npos && v.find('e') == std::string::npos &&
          v.find("inf") == std::string::npos && v.find("nan") == std::string::npos) {
        v += ".0";
      }
      out += v;
    }
  } else {
    out += std::to_string(s.label.hard_class());
  }
  out += '\n';
  char buf[48];
  for (const Event& e : s.events) {
    std::snprintf(buf, sizeof buf, "%" PRIu64 " %" PRIu32 "\n", e.t_us, e.channel);
    out += buf;
  }
  return out;
}

DeltaSequence compute_deltas(const EventStream& s, double time_unit) {
  if (time_unit <= 0) fail("time_unit must be positive");
  s.validate();
  DeltaSequence d;
  d.deltas.resize(s.events.size());
  d.channels.resize(s.events.size());
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    d.channels[i] = s.events[i].channel;
    d.deltas[i] = (i == 0) ? 0.0
                           : static_cast<double>(s.events[i].t_us - s.events[i - 1].t_us) * time_unit;
  }
  return d;
}

namespace {

std::size_t label_width(const Label& l) {
  return l.is_soft() ? l.probs().size() : static_cast<std::size_t>(l.hard_class()) + 1;
}

double label_weight(const Label& l, std::size_t k) {
  if (l.is_soft()) return k < l.probs().size() ? l.probs()[k] : 0.0;
  return k == static_cast<std::size_t>(l.hard_class()) ? 1.0 : 0.0;
}

Label as_soft(const Label& l) {
  std::size_t k = label_width(l);
  std::vector<double> p(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) p[i] = label_weight(l, i);
  return Label::soft(std::move(p));
}

}  // namespace

EventStream cutmix(const EventStream& a, const EventStream& b, Rng& rng) {
  a.validate();
  b.validate();
  if (a.num_channels != b.num_channels) {
    fail("cutmix requires matching channel counts, got " + std::to_string(a.num_channels) +
         " and " + std::to_string(b.num_channels));
  }

  std::uint64_t wmax = std::min(a.duration_us(), b.duration_us());
  std::uint64_t wlen = static_cast<std::uint64_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(wmax)));
  if (wlen == 0 || a.events.empty() || b.events.empty()) {
    EventStream out = a;
    out.label = as_soft(a.label);
    return out;
  }

  std::uint64_t a0 = a.events.front().t_us;
  std::uint64_t b0 = b.events.front().t_us;
  std::uint64_t start_a =
      a0 + static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(a.duration_us() - wlen)));
  std::uint64_t start_b =
      b0 + static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(b.duration_us() - wlen)));

  // windows are half-open: [start, start + wlen)
  std::vector<Event> keep;
  keep.reserve(a.events.size());
  for (const Event& e : a.events) {
    if (e.t_us < start_a || e.t_us >= start_a + wlen) keep.push_back(e);
  }
  std::vector<Event> insert;
  for (const Event& e : b.events) {
    if (e.t_us >= start_b && e.t_us < start_b + wlen) {
      insert.push_back({e.t_us - start_b + start_a, e.channel});
    }
  }

  EventStream out;
  out.num_channels = a.num_channels;
  out.events.resize(keep.size() + insert.size());
  std::merge(keep.begin(), keep.end(), insert.begin(), insert.end(), out.events.begin(),
             [](const Event& x, const Event& y) { return x.t_us < y.t_us; });

  std::uint64_t from_a = keep.size();
  std::uint64_t from_b = insert.size();
  std::uint64_t total = from_a + from_b;
  if (total == 0) {
    out.label = as_soft(a.label);
    return out;
  }
  double wa = static_cast<double>(from_a) / static_cast<double>(total);
  double wb = static_cast<double>(from_b) / static_cast<double>(total);
  std::size_t k = std::max(label_width(a.label), label_width(b.label));
  std::vector<double> probs(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    probs[i] = wa * label_weight(a.label, i) + wb * label_weight(b.label, i);
  }
  out.label = Label::soft(std::move(probs));
  return out;
}

EventStream augment_jitter_drop(const EventStream& s, const AugmentConfig& cfg, Rng& rng) {
  s.validate();
  if (cfg.drop_prob < 0 || cfg.drop_prob > 1) fail("drop_prob must be in [0, 1]");
  if (cfg.time_jitter_us < 0 || cfg.channel_jitter < 0) fail("jitter bounds must be non-negative");

  EventStream out;
  out.num_channels = s.num_channels;
  out.label = s.label;
  out.events.reserve(s.events.size());
  for (const Event& e : s.events) {
    if (cfg.drop_prob > 0 && rng.bernoulli(cfg.drop_prob)) continue;
    Event n = e;
    if (cfg.time_jitter_us > 0) {
      std::int64_t j = rng.uniform_int(-cfg.time_jitter_us, cfg.time_jitter_us);
      std::int64_t t = static_cast<std::int64_t>(n.t_us) + j;
      n.t_us = t < 0 ? 0 : static_cast<std::uint64_t>(t);
    }
    if (cfg.channel_jitter > 0) {
      std::int64_t j = rng.uniform_int(-cfg.channel_jitter, cfg.channel_jitter);
      std::int64_t c = static_cast<std::int64_t>(n.channel) + j;
      c = std::clamp<std::int64_t>(c, 0, static_cast<std::int64_t>(s.num_channels) - 1);
      n.channel = static_cast<std::uint32_t>(c);
    }
    out.events.push_back(n);
  }
  if (cfg.time_jitter_us > 0) {
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const Event& x, const Event& y) { return x.t_us < y.t_us; });
  }
  return out;
}

EventStream slice_events(const EventStream& s, std::size_t max_events, Rng& rng) {
  if (max_events == 0) fail("slice length must be positive");
  if (s.events.size() <= max_events) return s;
  std::size_t start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(s.events.size() - max_events)));
  EventStream out;
  out.num_channels = s.num_channels;
  out.label = s.label;
  out.events.assign(s.events.begin() + start, s.events.begin() + start + max_events);
  return out;
}

template <typename T>
Batch<T> batch_pad(const std::vector<const EventStream*>& streams, double time_unit,
                   int num_classes) {
  if (streams.empty()) fail("cannot build a batch from zero streams");
  if (num_classes < 1) fail("num_classes must be positive");

  Batch<T> b;
  b.rows = static_cast<int>(streams.size());
  b.num_classes = num_classes;
  std::size_t max_len = 0;
  for (const EventStream* s : streams) max_len = std::max(max_len, s->events.size());
  b.max_len = static_cast<int>(max_len);

  b.channels.assign(streams.size() * max_len, 0);
  b.deltas.assign(streams.size() * max_len, T(0));
  b.mask.assign(streams.size() * max_len, 0);
  b.labels.assign(streams.size() * static_cast<std::size_t>(num_classes), T(0));
  b.lengths.resize(streams.size());

  for (std::size_t r = 0; r < streams.size(); ++r) {
    const EventStream& s = *streams[r];
    DeltaSequence d = compute_deltas(s, time_unit);
    b.lengths[r] = static_cast<int>(s.events.size());
    std::size_t base = r * max_len;
    for (std::size_t i = 0; i < s.events.size(); ++i) {
      b.channels[base + i] = d.channels[i];
      b.deltas[base + i] = static_cast<T>(d.deltas[i]);
      b.mask[base + i] = 1;
    }
    std::size_t lbase = r * static_cast<std::size_t>(num_classes);
    if (s.label.is_soft()) {
      const auto& p = s.label.probs();
      if (p.size() > static_cast<std::size_t>(num_classes)) {
        fail("soft label has " + std::to_string(p.size()) + " entries but batch has " +
             std::to_string(num_classes) + " classes");
      }
      for (std::size_t k = 0; k < p.size(); ++k) b.labels[lbase + k] = static_cast<T>(p[k]);
    } else {
      int cls = s.label.hard_class();
      if (cls >= num_classes) {
        fail("class " + std::to_string(cls) + " out of range [0, " +
             std::to_string(num_classes) + ")");
      }
      b.labels[lbase + cls] = T(1);
    }
  }
  return b;
}

template Batch<float> batch_pad<float>(const std::vector<const EventStream*>&, double, int);
template Batch<double> batch_pad<double>(const std::vector<const EventStream*>&, double, int);

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest) {
  std::string text = read_file(manifest);
  std::filesystem::path root = manifest.parent_path();
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string path, split;
    long cls = -1;
    if (!(ls >> path >> split >> cls)) fail_line(line_no, "manifest entry must be 'path split class'");
    EventStream s;
    try {
      s = parse_event_stream(read_file(root / path));
    } catch (const std::exception& e) {
      fail(path + ": " + e.what());
    }
    if (s.label.hard_class() != cls) {
      fail(path + ": manifest class " + std::to_string(cls) + " does not match stream label " +
           std::to_string(s.label.hard_class()));
    }
    if (split == "train") ds.train.push_back(std::move(s));
    else if (split == "valid") ds.valid.push_back(std::move(s));
    else if (split == "test") ds.test.push_back(std::move(s));
    else fail_line(line_no, "unknown split '" + split + "' (expected train, valid or test)");
  }
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  auto dump = [&](const std::vector<EventStream>& v, const char* split) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%05zu.evs", split, i);
      std::ofstream out(dir / name, std::ios::binary);
      if (!out) fail("cannot write " + (dir / name).string());
      out << write_event_stream(v[i]);
      manifest += std::string(name) + " " + split + " " + std::to_string(v[i].label.hard_class()) + "\n";
    }
  };
  dump(ds.train, "train");
  dump(ds.valid, "valid");
  dump(ds.test, "test");
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  if (!out) fail("cannot write " + (dir / "manifest.txt").string());
  out << manifest;
}

namespace {

double median_of(std::vector<std::size_t>& v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (n % 2) return static_cast<double>(v[n / 2]);
  return (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2])) / 2.0;
}

SplitStats split_stats(const std::string& name, const std::vector<EventStream>& v) {
  SplitStats st;
  st.split = name;
  st.samples = v.size();
  std::vector<std::size_t> counts;
  std::map<int, std::vector<std::size_t>> per_class;
  for (const EventStream& s : v) {
    counts.push_back(s.events.size());
    per_class[s.label.hard_class()].push_back(s.events.size());
  }
  if (!counts.empty()) {
    st.min_events = *std::min_element(counts.begin(), counts.end());
    st.max_events = *std::max_element(counts.begin(), counts.end());
    st.median_events = median_of(counts);
  }
  for (auto& [cls, c] : per_class) {
    ClassStats cs;
    cs.cls = cls;
    cs.samples = c.size();
    cs.min_events = *std::min_element(c.begin(), c.end());
    cs.max_events = *std::max_element(c.begin(), c.end());
    cs.median_events = median_of(c);
    st.per_class.push_back(cs);
  }
  return st;
}

}  // namespace

InspectReport inspect_dataset(const Dataset& ds) {
  InspectReport r;
  int max_cls = -1;
  for (const auto* v : {&ds.train, &ds.valid, &ds.test}) {
    for (const EventStream& s : *v) {
      r.num_channels = std::max(r.num_channels, s.num_channels);
      max_cls = std::max(max_cls, s.label.hard_class());
      if (s.label.is_soft()) {
        max_cls = std::max(max_cls, static_cast<int>(s.label.probs().size()) - 1);
      }
    }
  }
  r.num_classes = max_cls + 1;
  if (!ds.train.empty()) r.splits.push_back(split_stats("train", ds.train));
  if (!ds.valid.empty()) r.splits.push_back(split_stats("valid", ds.valid));
  if (!ds.test.empty()) r.splits.push_back(split_stats("test", ds.test));
  return r;
}

}  // namespace evssm
