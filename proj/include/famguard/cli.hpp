#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace famguard::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitWithhold = 3;
inline constexpr int kExitIo = 4;

inline constexpr const char* kVersion = "0.1.0";

/// Environment lookup; the default reads the process environment.
using Env = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

/// Runs `famguard <args...>` (args exclude the program name) and returns the exit code.
/// Reads "-" inputs from `in`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
        const Env& env = process_env);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace famguard::cli
