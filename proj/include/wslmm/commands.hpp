#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace wsl {

/// Each command throws on a rejected precondition; the CLI maps that to a
/// nonzero exit code.
void cmd_synth(const std::filesystem::path& spec, const std::filesystem::path& out, std::ostream& log);
void cmd_train(const std::filesystem::path& config, bool log_erasing, std::ostream& log);
void cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data,
              const std::filesystem::path& out, std::ostream& log);
void cmd_predict(const std::filesystem::path& ckpt, const std::filesystem::path& out,
                 const std::vector<std::filesystem::path>& images, std::ostream& log);

}  // namespace wsl
