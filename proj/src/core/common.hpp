#pragma once

#include <stdexcept>
#include <string>

namespace preview {

// Error taxonomy; the C API and CLI map these onto status/exit codes.
enum class errc {
    config = 2,   // bad configuration or arguments
    io = 3,       // filesystem / parse failures
    numeric = 4,  // non-finite values where finite ones are required
};

class error : public std::runtime_error {
  public:
    error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw error(errc::config, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw error(errc::io, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw error(errc::numeric, msg); }

inline void require(bool cond, errc code, const std::string& msg) {
    if (!cond) throw error(code, msg);
}

}  // namespace preview
