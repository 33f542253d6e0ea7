#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace partflow {

// Sink for non-fatal diagnostics. Defaults to stderr; tests swap it to
// capture messages.
using DiagnosticSink = std::function<void(std::string_view)>;

void set_diagnostic_sink(DiagnosticSink sink);
void warn(std::string_view message);

// Installs a sink for the lifetime of the guard and restores the previous one.
class ScopedDiagnosticSink {
 public:
  explicit ScopedDiagnosticSink(DiagnosticSink sink);
  ~ScopedDiagnosticSink();
  ScopedDiagnosticSink(const ScopedDiagnosticSink&) = delete;
  ScopedDiagnosticSink& operator=(const ScopedDiagnosticSink&) = delete;

 private:
  DiagnosticSink previous_;
};

}  // namespace partflow
