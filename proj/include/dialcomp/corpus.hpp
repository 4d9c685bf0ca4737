#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dialcomp {

enum class Speaker { User, Assistant };

struct SlotAnnotation {
  std::string domain;  // lowercase
  std::string slot;
  std::string value;
};

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;  // whitespace-normalized, non-empty
  std::vector<SlotAnnotation> slots;
};

struct Exchange {
  Turn user;
  Turn assistant;
};

enum class TaskLabel { SingleTask, MultiTask };
enum class Origin { Human, Synthetic };

// Filled for synthetic dialogues: where the prefix and body came from.
struct Provenance {
  std::string prefix_source_id;
  std::string body_source_id;
  int prefix_exchange_count = 0;
  bool topic_change_injected = false;
};

struct Dialogue {
  std::string id;
  std::vector<Exchange> exchanges;
  std::set<std::string> domains;            // set by derive_task_label
  std::optional<TaskLabel> task_label;      // absent until labeled
  Origin origin = Origin::Human;
  std::optional<Provenance> provenance;

  int exchange_count() const { return static_cast<int>(exchanges.size()); }
  bool is_single_task() const { return task_label == TaskLabel::SingleTask; }
  bool is_multi_task() const { return task_label == TaskLabel::MultiTask; }
};

struct CorpusSplit {
  std::vector<Dialogue> train;
  std::vector<Dialogue> valid;
  std::vector<Dialogue> test;
  uint64_t split_seed = 0;
};

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

// Table-1 style mixture: how many single- and multi-task dialogues to draw.
struct MixtureSpec {
  int n_single = 0;
  int n_multiple = 0;
  int total() const { return n_single + n_multiple; }
};

enum class MixtureAllocation { GreedyProportional, Random };

// Parses the corpus interchange JSON (top-level array of dialogues with
// alternating user/assistant turns). Leaves dialogues unlabeled. A trailing
// unpaired user turn is dropped with a warning; any other alternation defect
// is a structural error naming the dialogue id.
std::vector<Dialogue> parse_corpus(const std::string& json_text);
std::vector<Dialogue> parse_corpus_file(const std::string& path);

// Serializes dialogues back into the interchange schema.
std::string corpus_to_json(const std::vector<Dialogue>& dialogues);

// Sets d.domains to the union of annotated domains over all turns and
// labels the dialogue single/multi. Throws UnlabeledDialogueError when no
// turn carries an annotation.
TaskLabel derive_task_label(Dialogue& d);

// Labels every dialogue, dropping unlabeled ones. Returns the dropped count.
size_t relabel_corpus(std::vector<Dialogue>& dialogues);

// Deterministic stratified split. Global sizes come from floor(fraction * N)
// with the remainder assigned to train; strata (single vs multi) are
// allocated proportionally with a largest-remainder fixup so each split's
// label ratio tracks the corpus within one dialogue per stratum.
CorpusSplit make_splits(const std::vector<Dialogue>& dialogues, const SplitFractions& fractions,
                        uint64_t seed);

// Draws exactly spec.n_single + spec.n_multiple dialogues from the pool
// without replacement. GreedyProportional keeps each stratum's per-domain
// (or per-combination) counts proportional to the pool; Random ignores
// domain structure.
std::vector<Dialogue> build_mixture(const std::vector<Dialogue>& train_pool,
                                    const MixtureSpec& spec, uint64_t seed,
                                    MixtureAllocation allocation = MixtureAllocation::GreedyProportional);

// All turn texts of a dialogue list, in corpus order (user then assistant
// per exchange).
std::vector<std::string> collect_turn_texts(const std::vector<Dialogue>& dialogues);

// Comma-joined sorted domain set, used as a grouping key.
std::string domain_combo_key(const std::set<std::string>& domains);

}  // namespace dialcomp
