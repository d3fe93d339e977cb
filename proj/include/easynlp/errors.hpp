#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace easynlp {

// Coarse error families. The CLI maps these onto process exit codes.
enum class ErrorKind { usage, data, model, internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  // Where it happened from the caller's point of view, e.g. a CLI flag.
  const std::string& context() const noexcept { return context_; }
  void set_context(std::string context) { context_ = std::move(context); }

 private:
  ErrorKind kind_;
  std::string context_;
};

#define EASYNLP_DEFINE_ERROR(Name, Kind, Prefix)                                 \
  class Name : public Error {                                                    \
   public:                                                                       \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, Prefix + what) {} \
  };

EASYNLP_DEFINE_ERROR(DimensionError, internal, std::string("dimension error: "))
EASYNLP_DEFINE_ERROR(IndexError, data, std::string("index error: "))
EASYNLP_DEFINE_ERROR(DomainError, data, std::string("domain error: "))
EASYNLP_DEFINE_ERROR(StateError, internal, std::string("state error: "))
EASYNLP_DEFINE_ERROR(ConfigError, model, std::string("config error: "))
EASYNLP_DEFINE_ERROR(FormatError, model, std::string("format error: "))
EASYNLP_DEFINE_ERROR(ValidationError, model, std::string("validation error: "))
EASYNLP_DEFINE_ERROR(ParseError, data, std::string("parse error: "))
EASYNLP_DEFINE_ERROR(SchemaError, data, std::string("schema error: "))
EASYNLP_DEFINE_ERROR(RegistryError, data, std::string("registry error: "))
EASYNLP_DEFINE_ERROR(LabelError, data, std::string("label error: "))
EASYNLP_DEFINE_ERROR(TemplateError, usage, std::string("template error: "))
EASYNLP_DEFINE_ERROR(CacheError, data, std::string("cache error: "))
EASYNLP_DEFINE_ERROR(UsageError, usage, std::string("usage error: "))

#undef EASYNLP_DEFINE_ERROR

}  // namespace easynlp
