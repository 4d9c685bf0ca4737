#pragma once

#include <stdexcept>
#include <string>

namespace dialcomp {

// Exit-code mapping for the CLI: usage = 1, data = 2, numeric = 3.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A dialogue with no slot annotation in any turn; the caller decides
// whether to drop it.
class UnlabeledDialogueError : public DataError {
 public:
  explicit UnlabeledDialogueError(const std::string& dialogue_id)
      : DataError("dialogue '" + dialogue_id + "' carries no slot annotations"),
        dialogue_id_(dialogue_id) {}
  const std::string& dialogue_id() const { return dialogue_id_; }

 private:
  std::string dialogue_id_;
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dialcomp
