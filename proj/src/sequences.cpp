#include "adsf/sequences.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adsf {

const char* action_name(Action a) {
  switch (a) {
    case Action::view: return "view";
    case Action::favorite: return "favorite";
    case Action::cart_add: return "cart_add";
    case Action::purchase: return "purchase";
    case Action::search: return "search";
  }
  return "?";
}

const char* entity_name(EntityKind e) {
  switch (e) {
    case EntityKind::listing: return "listing";
    case EntityKind::shop: return "shop";
    case EntityKind::taxonomy: return "taxonomy";
    case EntityKind::query: return "query";
  }
  return "?";
}

ActionSequence truncate_window(const std::vector<ActionEvent>& events,
                               int64_t window_seconds, int64_t max_len) {
  ActionSequence out;
  out.max_len = max_len;
  out.window_seconds = window_seconds;
  if (events.empty()) return out;
  for (size_t i = 1; i < events.size(); ++i)
    if (events[i].timestamp > events[i - 1].timestamp)
      throw std::invalid_argument("truncate_window: events must be newest first");
  int64_t newest = events.front().timestamp;
  for (const ActionEvent& e : events) {
    if (newest - e.timestamp > window_seconds) break;
    if (static_cast<int64_t>(out.events.size()) >= max_len) break;
    out.events.push_back(e);
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::pair<std::string, int64_t>> entries,
                       int64_t k, int64_t num_oov)
    : entries_(std::move(entries)), k_(k), num_oov_(num_oov) {
  if (num_oov_ < 1) throw std::invalid_argument("vocabulary needs at least one OOV row");
  for (size_t i = 0; i < entries_.size(); ++i)
    index_[entries_[i].first] = num_oov_ + static_cast<int64_t>(i);
}

int64_t Vocabulary::index_of(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? 0 : it->second;
}

bool Vocabulary::contains(const std::string& id) const {
  return index_.count(id) > 0;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open vocabulary file for writing: " + path);
  f << k_ << " " << num_oov_ << "\n";
  for (const auto& [id, freq] : entries_) f << id << "\t" << freq << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open vocabulary file: " + path);
  int64_t k = 0, num_oov = 0;
  std::string header;
  if (!std::getline(f, header)) throw std::runtime_error("empty vocabulary file: " + path);
  {
    std::istringstream hs(header);
    if (!(hs >> k >> num_oov)) throw std::runtime_error("bad vocabulary header in " + path);
  }
  std::vector<std::pair<std::string, int64_t>> entries;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("bad vocabulary line in " + path);
    entries.emplace_back(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
  }
  return Vocabulary(std::move(entries), k, num_oov);
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       int64_t k, int64_t num_oov) {
  if (k < 1) throw std::invalid_argument("build_vocab: K must be >= 1");
  std::map<std::string, int64_t> counts;
  for (const auto& seq : corpus)
    for (const auto& id : seq) ++counts[id];
  std::vector<std::pair<std::string, int64_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int64_t>(sorted.size()) > k) sorted.resize(static_cast<size_t>(k));
  return Vocabulary(std::move(sorted), k, num_oov);
}

PaddedBatch pad_and_mask(const std::vector<std::vector<std::string>>& sequences,
                         const Vocabulary& vocab, int64_t max_len) {
  PaddedBatch out;
  out.batch = static_cast<int64_t>(sequences.size());
  out.max_len = max_len;
  out.indices.assign(static_cast<size_t>(out.batch * max_len), 0);
  out.mask.assign(static_cast<size_t>(out.batch * max_len), 0);
  out.lengths.resize(static_cast<size_t>(out.batch));
  for (int64_t r = 0; r < out.batch; ++r) {
    const auto& seq = sequences[static_cast<size_t>(r)];
    int64_t len = std::min<int64_t>(static_cast<int64_t>(seq.size()), max_len);
    out.lengths[static_cast<size_t>(r)] = len;
    for (int64_t j = 0; j < len; ++j) {
      out.indices[static_cast<size_t>(r * max_len + j)] = vocab.index_of(seq[static_cast<size_t>(j)]);
      out.mask[static_cast<size_t>(r * max_len + j)] = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void normalize_rows(TensorData& t) {
  int64_t d = t.last_dim();
  int64_t rows = t.numel() / d;
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += t.v[static_cast<size_t>(r * d + j)] * t.v[static_cast<size_t>(r * d + j)];
    double inv = 1.0 / std::sqrt(std::max(s, 1e-12));
    for (int64_t j = 0; j < d; ++j) t.v[static_cast<size_t>(r * d + j)] *= inv;
  }
}

double dot_row(const TensorData& a, int64_t ra, const TensorData& b, int64_t rb) {
  int64_t d = a.last_dim();
  double s = 0.0;
  for (int64_t j = 0; j < d; ++j)
    s += a.v[static_cast<size_t>(ra * d + j)] * b.v[static_cast<size_t>(rb * d + j)];
  return s;
}

// Intercept that hits a target mean sigmoid over a fixed set of logits.
double calibrate_intercept(const std::vector<double>& logits, double target) {
  double lo = -25.0, hi = 25.0;
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    double m = 0.0;
    for (double l : logits) m += 1.0 / (1.0 + std::exp(-(l + mid)));
    m /= static_cast<double>(logits.size());
    if (m < target) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

SyntheticWorld generate_world(const WorldConfig& config) {
  if (config.num_users <= 0 || config.num_listings <= 0 || config.num_shops <= 0 ||
      config.num_taxonomies <= 0 || config.attr_dim <= 0)
    throw std::invalid_argument("generate_world: dimensions must be positive");
  SyntheticWorld w;
  w.config = config;
  RngStream rng(config.seed);
  RngStream pref_rng = rng.substream("user_prefs");
  RngStream attr_rng = rng.substream("listing_attrs");
  RngStream assign_rng = rng.substream("assignments");

  int64_t d = config.attr_dim;
  w.user_prefs = TensorData::zeros({config.num_users, d});
  for (double& x : w.user_prefs.v) x = pref_rng.normal();
  normalize_rows(w.user_prefs);

  // Cluster listing attributes around per-taxonomy centers so taxonomy is
  // recoverable from attributes.
  TensorData centers = TensorData::zeros({config.num_taxonomies, d});
  for (double& x : centers.v) x = attr_rng.normal();
  normalize_rows(centers);

  w.listing_attrs = TensorData::zeros({config.num_listings, d});
  w.listing_shop.resize(static_cast<size_t>(config.num_listings));
  w.listing_taxonomy.resize(static_cast<size_t>(config.num_listings));
  for (int64_t i = 0; i < config.num_listings; ++i) {
    int64_t tax = static_cast<int64_t>(assign_rng.uniform_int(static_cast<uint64_t>(config.num_taxonomies)));
    w.listing_taxonomy[static_cast<size_t>(i)] = tax;
    // shops live inside one taxonomy
    int64_t shops_per_tax = std::max<int64_t>(1, config.num_shops / config.num_taxonomies);
    int64_t shop = tax * shops_per_tax +
                   static_cast<int64_t>(assign_rng.uniform_int(static_cast<uint64_t>(shops_per_tax)));
    w.listing_shop[static_cast<size_t>(i)] = shop % config.num_shops;
    for (int64_t j = 0; j < d; ++j)
      w.listing_attrs.v[static_cast<size_t>(i * d + j)] =
          0.8 * centers.v[static_cast<size_t>(tax * d + j)] + config.attr_noise * attr_rng.normal();
  }
  normalize_rows(w.listing_attrs);
  return w;
}

std::vector<Impression> generate_impressions(const SyntheticWorld& world,
                                             const ImpressionConfig& config,
                                             RngStream rng) {
  const WorldConfig& wc = world.config;
  int64_t d = wc.attr_dim;
  RngStream hist_rng = rng.substream("history");
  RngStream cand_rng = rng.substream("candidate");
  RngStream label_rng = rng.substream("labels");

  // Fixed global popularity direction: the signal a context-only model can learn.
  RngStream pop_rng = RngStream(wc.seed).substream("popularity");
  std::vector<double> pop(static_cast<size_t>(d));
  for (double& x : pop) x = pop_rng.normal();
  {
    double s = 0.0;
    for (double x : pop) s += x * x;
    for (double& x : pop) x /= std::sqrt(std::max(s, 1e-12));
  }

  // Identity-level popularity: an intercept per listing that attributes cannot
  // express, so only models that see the candidate id can absorb it.
  RngStream bias_rng = RngStream(wc.seed).substream("listing_bias");
  std::vector<double> listing_bias(static_cast<size_t>(wc.num_listings), 0.0);
  if (config.listing_bias > 0.0)
    for (double& x : listing_bias) x = config.listing_bias * bias_rng.normal();

  // Per-listing worth that only matters when the listing was favorited; a
  // second identity-level signal, carried by the action type.
  RngStream fav_rng = RngStream(wc.seed).substream("favorite_values");
  std::vector<double> fav_value(static_cast<size_t>(wc.num_listings), 0.0);
  if (config.favorite_value > 0.0)
    for (double& x : fav_value) x = config.favorite_value * fav_rng.normal();

  struct Draft {
    Impression imp;
    double click_logit = 0.0;
    double purchase_logit = 0.0;
  };
  std::vector<Draft> drafts;
  drafts.reserve(static_cast<size_t>(config.num_impressions));

  for (int64_t n = 0; n < config.num_impressions; ++n) {
    Draft dr;
    int64_t u = static_cast<int64_t>(hist_rng.uniform_int(static_cast<uint64_t>(wc.num_users)));
    dr.imp.user = u;

    // History is drawn independently of user preference so that, with the
    // interaction weights zeroed, sequences carry no label signal at all.
    std::vector<int64_t> hist(static_cast<size_t>(config.history_len));
    std::vector<Action> hist_action(static_cast<size_t>(config.history_len));
    for (int64_t h = 0; h < config.history_len; ++h) {
      hist[static_cast<size_t>(h)] =
          static_cast<int64_t>(hist_rng.uniform_int(static_cast<uint64_t>(wc.num_listings)));
      double r = hist_rng.uniform();
      hist_action[static_cast<size_t>(h)] =
          r < 0.78 ? Action::view : (r < 0.90 ? Action::favorite : Action::cart_add);
    }

    // Candidate: half the time a listing near the recent views, otherwise random.
    int64_t cand;
    if (cand_rng.bernoulli(0.5) && !hist.empty()) {
      int64_t anchor = hist[cand_rng.uniform_int(hist.size())];
      int64_t tax = world.listing_taxonomy[static_cast<size_t>(anchor)];
      // rejection-sample a listing in the same taxonomy
      cand = anchor;
      for (int tries = 0; tries < 50; ++tries) {
        int64_t c = static_cast<int64_t>(cand_rng.uniform_int(static_cast<uint64_t>(wc.num_listings)));
        if (world.listing_taxonomy[static_cast<size_t>(c)] == tax) { cand = c; break; }
      }
    } else {
      cand = static_cast<int64_t>(cand_rng.uniform_int(static_cast<uint64_t>(wc.num_listings)));
    }
    dr.imp.candidate = cand;

    // Sequence-derived signal terms.
    // Views are weighted by recency (h = 0 is the newest event); the default
    // decay of 1 keeps the plain mean.
    std::vector<double> view_mean(static_cast<size_t>(d), 0.0);
    double view_weight = 0.0, w = 1.0;
    double fav_sum = 0.0;
    int64_t n_fav = 0;
    bool same_shop = false, same_tax = false, revisit = false;
    for (int64_t h = 0; h < config.history_len; ++h) {
      int64_t l = hist[static_cast<size_t>(h)];
      if (l == cand) revisit = true;
      if (hist_action[static_cast<size_t>(h)] == Action::favorite) {
        fav_sum += fav_value[static_cast<size_t>(l)];
        ++n_fav;
      }
      if (hist_action[static_cast<size_t>(h)] == Action::view) {
        for (int64_t j = 0; j < d; ++j)
          view_mean[static_cast<size_t>(j)] += w * world.listing_attrs.v[static_cast<size_t>(l * d + j)];
        view_weight += w;
      }
      w *= config.recency_decay;
      if (world.listing_shop[static_cast<size_t>(l)] == world.listing_shop[static_cast<size_t>(cand)])
        same_shop = true;
      if (world.listing_taxonomy[static_cast<size_t>(l)] == world.listing_taxonomy[static_cast<size_t>(cand)])
        same_tax = true;
    }
    double seq_attr_term = 0.0;
    if (view_weight > 0.0) {
      for (int64_t j = 0; j < d; ++j)
        seq_attr_term += (view_mean[static_cast<size_t>(j)] / view_weight) *
                         world.listing_attrs.v[static_cast<size_t>(cand * d + j)];
    }
    double pop_term = 0.0;
    for (int64_t j = 0; j < d; ++j)
      pop_term += pop[static_cast<size_t>(j)] * world.listing_attrs.v[static_cast<size_t>(cand * d + j)];
    double pref_term = dot_row(world.user_prefs, u, world.listing_attrs, cand);

    dr.click_logit = 1.2 * pop_term + config.alpha * pref_term +
                     config.beta * seq_attr_term +
                     config.gamma * ((same_shop ? 1.0 : 0.0) + 0.5 * (same_tax ? 1.0 : 0.0)) +
                     config.revisit_bonus * (revisit ? 1.0 : 0.0) +
                     listing_bias[static_cast<size_t>(cand)] +
                     (n_fav > 0 ? fav_sum / static_cast<double>(n_fav) : 0.0);
    dr.purchase_logit = 0.8 * pop_term + config.purchase_alpha * pref_term +
                        0.5 * config.beta * seq_attr_term +
                        config.purchase_gamma * (same_shop ? 1.0 : 0.0);

    // Materialize per-(entity, action) sequences, most recent first.
    int64_t t0 = 4000;
    for (int64_t h = 0; h < config.history_len; ++h) {
      int64_t l = hist[static_cast<size_t>(h)];
      int64_t ts = t0 - h * (config.window_seconds / std::max<int64_t>(config.history_len + 1, 1));
      const char* a = action_name(hist_action[static_cast<size_t>(h)]);
      dr.imp.sequences[std::string("listing:") + a].emplace_back(world.listing_id(l), ts);
      dr.imp.sequences[std::string("shop:") + a].emplace_back(
          world.shop_id(world.listing_shop[static_cast<size_t>(l)]), ts);
      dr.imp.sequences[std::string("taxonomy:") + a].emplace_back(
          world.taxonomy_id(world.listing_taxonomy[static_cast<size_t>(l)]), ts);
    }
    drafts.push_back(std::move(dr));
  }

  // Labels are Bernoulli draws from calibrated logits, keeping base rates at
  // their configured targets regardless of the signal weights.
  std::vector<double> click_logits;
  click_logits.reserve(drafts.size());
  for (const Draft& dr : drafts) click_logits.push_back(dr.click_logit);
  double b_click = calibrate_intercept(click_logits, config.target_click_rate);

  std::vector<Impression> rows;
  rows.reserve(drafts.size());
  std::vector<double> purchase_logits;
  std::vector<size_t> clicked_idx;
  for (size_t i = 0; i < drafts.size(); ++i) {
    Draft& dr = drafts[i];
    double p = 1.0 / (1.0 + std::exp(-(dr.click_logit + b_click)));
    dr.imp.label_click = label_rng.bernoulli(p) ? 1 : 0;
    if (dr.imp.label_click) {
      clicked_idx.push_back(i);
      purchase_logits.push_back(dr.purchase_logit);
    }
  }
  if (!purchase_logits.empty()) {
    double b_pur = calibrate_intercept(purchase_logits, config.target_purchase_rate);
    for (size_t k = 0; k < clicked_idx.size(); ++k) {
      Draft& dr = drafts[clicked_idx[k]];
      double p = 1.0 / (1.0 + std::exp(-(dr.purchase_logit + b_pur)));
      dr.imp.label_purchase = label_rng.bernoulli(p) ? 1 : 0;
    }
  }
  for (Draft& dr : drafts) rows.push_back(std::move(dr.imp));
  return rows;
}

std::vector<std::string> impression_sequence_keys() {
  std::vector<std::string> keys;
  for (const char* e : {"listing", "shop", "taxonomy"})
    for (const char* a : {"view", "favorite", "cart_add"})
      keys.push_back(std::string(e) + ":" + a);
  return keys;
}

void save_impressions(const std::vector<Impression>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset file for writing: " + path);
  const auto keys = impression_sequence_keys();
  f << "#rows\t" << rows.size() << "\n";
  for (const Impression& r : rows) {
    f << "U" << r.user << "\tL" << r.candidate << "\t" << r.label_click << "\t"
      << r.label_purchase;
    for (const auto& key : keys) {
      f << "\t";
      auto it = r.sequences.find(key);
      if (it != r.sequences.end()) {
        for (size_t i = 0; i < it->second.size(); ++i) {
          if (i) f << ",";
          f << it->second[i].first << ":" << it->second[i].second;
        }
      }
    }
    f << "\n";
  }
}

std::vector<Impression> load_impressions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset file: " + path);
  const auto keys = impression_sequence_keys();
  std::string line;
  if (!std::getline(f, line) || line.rfind("#rows\t", 0) != 0)
    throw std::runtime_error("dataset file missing #rows header: " + path);
  size_t declared = std::stoull(line.substr(6));
  std::vector<Impression> rows;
  rows.reserve(declared);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4 + keys.size())
      throw std::runtime_error("dataset row has wrong field count in " + path);
    Impression imp;
    imp.user = std::stoll(fields[0].substr(1));
    imp.candidate = std::stoll(fields[1].substr(1));
    imp.label_click = std::stoi(fields[2]);
    imp.label_purchase = std::stoi(fields[3]);
    for (size_t k = 0; k < keys.size(); ++k) {
      const std::string& fld = fields[4 + k];
      if (fld.empty()) continue;
      auto& seq = imp.sequences[keys[k]];
      size_t pos = 0;
      while (pos < fld.size()) {
        size_t comma = fld.find(',', pos);
        std::string pair = fld.substr(pos, comma == std::string::npos ? comma : comma - pos);
        size_t colon = pair.rfind(':');
        if (colon == std::string::npos)
          throw std::runtime_error("bad sequence pair in " + path);
        seq.emplace_back(pair.substr(0, colon), std::stoll(pair.substr(colon + 1)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    }
    rows.push_back(std::move(imp));
  }
  if (rows.size() != declared)
    throw std::runtime_error("dataset row count does not match header in " + path);
  return rows;
}

std::vector<Session> generate_sessions(const SyntheticWorld& world,
                                       const SessionConfig& config, RngStream rng) {
  const WorldConfig& wc = world.config;
  // listings grouped by taxonomy for in-group draws
  std::vector<std::vector<int64_t>> by_tax(static_cast<size_t>(wc.num_taxonomies));
  for (int64_t i = 0; i < wc.num_listings; ++i)
    by_tax[static_cast<size_t>(world.listing_taxonomy[static_cast<size_t>(i)])].push_back(i);

  std::vector<Session> sessions;
  sessions.reserve(static_cast<size_t>(config.num_sessions));
  for (int64_t s = 0; s < config.num_sessions; ++s) {
    int64_t tax = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(wc.num_taxonomies)));
    while (by_tax[static_cast<size_t>(tax)].empty())
      tax = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(wc.num_taxonomies)));
    Session sess;
    sess.purchased = rng.bernoulli(config.purchase_session_rate);
    for (int64_t k = 0; k < config.session_len; ++k) {
      int64_t l;
      if (rng.bernoulli(config.cross_taxonomy_rate)) {
        l = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(wc.num_listings)));
      } else {
        const auto& group = by_tax[static_cast<size_t>(tax)];
        l = group[rng.uniform_int(group.size())];
      }
      sess.listings.push_back(world.listing_id(l));
    }
    sessions.push_back(std::move(sess));
  }
  return sessions;
}

}  // namespace adsf
