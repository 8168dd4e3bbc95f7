#pragma once

#include <cstdint>
#include <span>

namespace timeshoot {

/// Raw evaluation counts of one sequential piece of work (one integration).
struct EvalCounts {
  std::int64_t nfe = 0;
  std::int64_t jvp = 0;
  std::int64_t jmp = 0;

  EvalCounts& operator+=(const EvalCounts& other) {
    nfe += other.nfe;
    jvp += other.jvp;
    jmp += other.jmp;
    return *this;
  }
};

/// Vector-field evaluation accounting under the parallel cost model: `total`
/// counts every evaluation, `span` only those on the sequential critical path.
///
/// Work recorded with `record_sequential` lies on the critical path; a
/// parallel batch contributes its slowest element to the span and the sum of
/// all elements to the total. Merging happens on the calling thread after a
/// batch completes, so the ledger itself needs no synchronisation.
class NfeLedger {
 public:
  void record_sequential(const EvalCounts& counts);
  void record_parallel(std::span<const EvalCounts> per_element);

  /// Appends another ledger's work as if it ran after this one.
  void append(const NfeLedger& later);

  std::int64_t total_nfe() const { return total_nfe_; }
  std::int64_t span_nfe() const { return span_nfe_; }
  std::int64_t total_jvp() const { return total_jvp_; }
  std::int64_t total_jmp() const { return total_jmp_; }

 private:
  std::int64_t total_nfe_ = 0;
  std::int64_t span_nfe_ = 0;
  std::int64_t total_jvp_ = 0;
  std::int64_t total_jmp_ = 0;
};

}  // namespace timeshoot
