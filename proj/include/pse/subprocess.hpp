// pse/subprocess.hpp
//
// Copyright 2026  The pse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command execution for external adapters (TTS backends, PESQ, MOS,
// speaker encoders). Commands are rendered templates run under /bin/sh
// with a hard timeout; stdout/stderr are captured for diagnostics.

#ifndef PSE_SUBPROCESS_HPP_
#define PSE_SUBPROCESS_HPP_

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pse/error.hpp"

namespace pse {

struct CommandResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string out;
  std::string err;
};

namespace detail {

inline std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::filesystem::path scratch_dir() {
  static std::atomic<std::uint64_t> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("pse_cmd_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace detail

// Replaces every occurrence of {key} in a template.
inline std::string render_template(std::string tmpl, const std::string &key,
                                   const std::string &value) {
  const std::string needle = "{" + key + "}";
  std::size_t pos = 0;
  while ((pos = tmpl.find(needle, pos)) != std::string::npos) {
    tmpl.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return tmpl;
}

inline CommandResult run_command(const std::string &command, int timeout_sec) {
  const auto dir = detail::scratch_dir();
  const auto script = dir / "cmd.sh";
  const auto out_f = dir / "stdout";
  const auto err_f = dir / "stderr";
  {
    std::ofstream s(script);
    s << command << "\n";
  }
  std::ostringstream full;
  full << "timeout " << timeout_sec << " /bin/sh " << script << " > " << out_f
       << " 2> " << err_f;
  const int status = std::system(full.str().c_str());

  CommandResult res;
  if (status == -1) {
    res.exit_code = -1;
  } else if (WIFEXITED(status)) {
    res.exit_code = WEXITSTATUS(status);
  } else {
    res.exit_code = 128;
  }
  res.timed_out = (res.exit_code == 124);  // coreutils timeout convention
  res.out = detail::slurp(out_f);
  res.err = detail::slurp(err_f);
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  return res;
}

}  // namespace pse

#endif  // PSE_SUBPROCESS_HPP_
