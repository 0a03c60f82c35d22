#pragma once

// Checkpoint files: one JSON header line, then every parameter as
// little-endian float32 in declaration order.

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "mtm/corpus.hpp"
#include "mtm/model.hpp"
#include "mtm/trainer.hpp"

namespace mtm {

inline constexpr const char* kCheckpointSchema = "mtm-ckpt-v1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  TrainConfig config;
  Vocabulary vocab;
  Model<float> model;
  std::size_t best_epoch = 0;
  std::optional<Metrics> best_valid;
};

void write_checkpoint(std::ostream& out, const TrainConfig& config, const Vocabulary& vocab,
                      const Model<float>& model, std::size_t best_epoch, const std::optional<Metrics>& best_valid);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const TrainConfig& config, const Vocabulary& vocab,
                     const Model<float>& model, std::size_t best_epoch, const std::optional<Metrics>& best_valid);
Checkpoint load_checkpoint(const std::string& path);

// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer);

}  // namespace mtm
