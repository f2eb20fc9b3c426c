#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adsf/rng.hpp"
#include "adsf/tensor.hpp"

namespace adsf {

enum class Action { view, favorite, cart_add, purchase, search };
enum class EntityKind { listing, shop, taxonomy, query };

const char* action_name(Action a);
const char* entity_name(EntityKind e);

struct ActionEvent {
  Action action;
  EntityKind entity_kind;
  std::string entity_id;
  int64_t timestamp = 0;  // seconds, >= 0
};

// Events in reverse chronological order, already window-truncated and capped.
struct ActionSequence {
  std::vector<ActionEvent> events;
  int64_t max_len = 50;
  int64_t window_seconds = 3600;
};

// Keeps events within `window_seconds` of the most recent one (inclusive
// boundary), then caps at the M most recent. Input must be reverse
// chronological. Idempotent.
ActionSequence truncate_window(const std::vector<ActionEvent>& events,
                               int64_t window_seconds, int64_t max_len);

// id -> index mapping with OOV rows at the front. Kept ids occupy
// [num_oov, num_oov + |kept|), ordered by frequency descending with ties
// broken by id ascending.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::pair<std::string, int64_t>> entries, int64_t k,
             int64_t num_oov);

  int64_t index_of(const std::string& id) const;  // OOV ids map to 0
  bool contains(const std::string& id) const;
  int64_t size() const { return num_oov_ + static_cast<int64_t>(entries_.size()); }
  int64_t num_oov() const { return num_oov_; }
  int64_t k() const { return k_; }
  const std::vector<std::pair<std::string, int64_t>>& entries() const { return entries_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::pair<std::string, int64_t>> entries_;  // (id, frequency)
  std::map<std::string, int64_t> index_;
  int64_t k_ = 0;
  int64_t num_oov_ = 1;
};

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       int64_t k, int64_t num_oov = 1);

struct PaddedBatch {
  int64_t batch = 0;
  int64_t max_len = 0;
  std::vector<int64_t> indices;  // [batch x M], pad slots hold the pad index
  std::vector<uint8_t> mask;     // [batch x M], true iff a real event
  std::vector<int64_t> lengths;

  int64_t at(int64_t row, int64_t col) const { return indices[static_cast<size_t>(row * max_len + col)]; }
};

// Pad index equals OOV index 0; the mask is what distinguishes padding.
PaddedBatch pad_and_mask(const std::vector<std::vector<std::string>>& sequences,
                         const Vocabulary& vocab, int64_t max_len);

// ---- synthetic world with planted signal -----------------------------------

struct WorldConfig {
  int64_t num_users = 500;
  int64_t num_listings = 750;
  int64_t num_shops = 60;
  int64_t num_taxonomies = 12;
  int64_t attr_dim = 8;
  double attr_noise = 0.5;  // listing scatter around its taxonomy center
  uint64_t seed = 1;
};

struct SyntheticWorld {
  WorldConfig config;
  TensorData user_prefs;     // [num_users x d]
  TensorData listing_attrs;  // [num_listings x d]
  std::vector<int64_t> listing_shop;
  std::vector<int64_t> listing_taxonomy;

  std::string listing_id(int64_t i) const { return "L" + std::to_string(i); }
  std::string shop_id(int64_t i) const { return "S" + std::to_string(i); }
  std::string taxonomy_id(int64_t i) const { return "T" + std::to_string(i); }
};

SyntheticWorld generate_world(const WorldConfig& config);

struct ImpressionConfig {
  int64_t num_impressions = 20000;
  int64_t history_len = 12;          // events per user history draw
  double alpha = 1.2;                // candidate-vs-preference affinity weight
  double beta = 1.5;                 // recent-view attr-mean interaction weight
  double recency_decay = 1.0;        // per-step weight decay of the view mean; 1 = flat
  double revisit_bonus = 0.0;        // added logit when the candidate sits in the history
  double listing_bias = 0.0;         // std of a per-listing intercept invisible to attributes
  double favorite_value = 0.0;       // std of per-listing values averaged over favorited events
  double gamma = 1.0;                // same-shop / same-taxonomy recency bonus
  double target_click_rate = 0.04;
  double purchase_alpha = 1.0;
  double purchase_gamma = 1.5;
  double target_purchase_rate = 0.12;  // conditional on click
  int64_t max_len = 12;
  int64_t window_seconds = 3600;
};

// One per-(entity, action) index sequence bundle. Sequences are stored as
// entity-id strings most recent first.
struct Impression {
  int64_t user = 0;
  int64_t candidate = 0;
  int label_click = 0;
  int label_purchase = 0;
  // keyed by "<entity>:<action>", e.g. "listing:view"
  std::map<std::string, std::vector<std::pair<std::string, int64_t>>> sequences;
};

std::vector<Impression> generate_impressions(const SyntheticWorld& world,
                                             const ImpressionConfig& config,
                                             RngStream rng);

// Canonical on-disk order of the per-(entity, action) sequence fields.
std::vector<std::string> impression_sequence_keys();

// Tab-separated impression files with a leading `#rows<TAB>N` header.
void save_impressions(const std::vector<Impression>& rows, const std::string& path);
std::vector<Impression> load_impressions(const std::string& path);

// Browsing sessions (listing ids) for representation pretraining; listings
// co-occur within their taxonomy group.
struct SessionConfig {
  int64_t num_sessions = 3000;
  int64_t session_len = 8;
  double purchase_session_rate = 0.15;
  double cross_taxonomy_rate = 0.02;  // chance a step escapes the group
};

struct Session {
  std::vector<std::string> listings;
  bool purchased = false;
};

std::vector<Session> generate_sessions(const SyntheticWorld& world,
                                       const SessionConfig& config, RngStream rng);

}  // namespace adsf
