#pragma once

#include <stdexcept>
#include <string>

namespace unisa {

// Every library failure derives from Error; kind() is a stable machine-readable tag.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define UNISA_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(tag, what) {}        \
  };

UNISA_DEFINE_ERROR(DimensionError, "dimension")
UNISA_DEFINE_ERROR(IndexError, "index")
UNISA_DEFINE_ERROR(ContractError, "contract")
UNISA_DEFINE_ERROR(NumericError, "numeric")
UNISA_DEFINE_ERROR(DataError, "data")
UNISA_DEFINE_ERROR(ConfigError, "config")
UNISA_DEFINE_ERROR(VocabError, "vocab")
UNISA_DEFINE_ERROR(DecodeError, "decode")
UNISA_DEFINE_ERROR(MetricError, "metric")
UNISA_DEFINE_ERROR(CheckpointError, "checkpoint")

#undef UNISA_DEFINE_ERROR

}  // namespace unisa
