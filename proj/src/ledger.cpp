#include "timeshoot/ledger.hpp"

#include <algorithm>

namespace timeshoot {

void NfeLedger::record_sequential(const EvalCounts& counts) {
  total_nfe_ += counts.nfe;
  span_nfe_ += counts.nfe;
  total_jvp_ += counts.jvp;
  total_jmp_ += counts.jmp;
}

void NfeLedger::record_parallel(std::span<const EvalCounts> per_element) {
  std::int64_t slowest = 0;
  for (const auto& counts : per_element) {
    total_nfe_ += counts.nfe;
    total_jvp_ += counts.jvp;
    total_jmp_ += counts.jmp;
    slowest = std::max(slowest, counts.nfe);
  }
  span_nfe_ += slowest;
}

void NfeLedger::append(const NfeLedger& later) {
  total_nfe_ += later.total_nfe_;
  span_nfe_ += later.span_nfe_;
  total_jvp_ += later.total_jvp_;
  total_jmp_ += later.total_jmp_;
}

}  // namespace timeshoot
