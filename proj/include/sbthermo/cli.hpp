#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbthermo/error.hpp"
#include "sbthermo/mlp.hpp"

namespace sbthermo::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitInvalidInput = 3,
  kExitFormat = 4,
  kExitQMismatch = 5,
  kExitFitFailure = 6,
  kExitResourceLimit = 7,
  kExitIo = 8,
};

int exit_code(ErrorCode code);

// Named parameter sets: "fast" for desk-scale runs, "full" for the large reference setup.
struct Profile {
  std::string name;
  std::uint64_t train_count;
  std::uint64_t test_count;
  double tail_epsilon;
  int sideband_count;
  int hidden_width;
  int epochs;
  int batch_size;
  double learning_rate;
  nn::LrSchedule schedule;
};

Profile profile(const std::string& name);
nlohmann::json to_json(const Profile& p);

// Format and program versions, embedded in every artifact.
nlohmann::json versions();

// Runs one command line. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sbthermo::cli
