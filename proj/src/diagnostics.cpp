#include "partflow/diagnostics.hpp"

#include <iostream>
#include <utility>

namespace partflow {
namespace {

DiagnosticSink& sink_slot() {
  static DiagnosticSink sink = [](std::string_view m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}

}  // namespace

void set_diagnostic_sink(DiagnosticSink sink) { sink_slot() = std::move(sink); }

void warn(std::string_view message) {
  if (auto& s = sink_slot()) s(message);
}

ScopedDiagnosticSink::ScopedDiagnosticSink(DiagnosticSink sink) : previous_(std::move(sink_slot())) {
  sink_slot() = std::move(sink);
}

ScopedDiagnosticSink::~ScopedDiagnosticSink() { sink_slot() = std::move(previous_); }

}  // namespace partflow
