#pragma once

#include <stdexcept>
#include <string>

namespace gfpc {

/// Base of every error the library throws. `kind()` is a short stable tag
/// used by the CLI for machine-parsable diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define GFPC_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

GFPC_DEFINE_ERROR(DimensionError, "dimension")
GFPC_DEFINE_ERROR(ContractError, "contract")
GFPC_DEFINE_ERROR(ConfigError, "config")
GFPC_DEFINE_ERROR(PairingError, "pairing")
GFPC_DEFINE_ERROR(DegenerateError, "degenerate")
GFPC_DEFINE_ERROR(BoundsError, "bounds")
GFPC_DEFINE_ERROR(InputError, "input")
GFPC_DEFINE_ERROR(IoError, "io")
GFPC_DEFINE_ERROR(FormatError, "format")
GFPC_DEFINE_ERROR(IngestionError, "ingestion")
GFPC_DEFINE_ERROR(CheckpointError, "checkpoint")
GFPC_DEFINE_ERROR(DigestError, "digest")

#undef GFPC_DEFINE_ERROR

}  // namespace gfpc
