//! Run statistics and their CSV encoding (header line plus one value row).

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub cycles: u64,
    pub committed: u64,
    pub squashes: u64,
    /// Issued loads that were later squashed.
    pub squashed_loads: u64,
    /// In-flight instruction fetches discarded by a squash.
    pub squashed_ifetches: u64,
    /// Squashed loads whose fill evicted a resident L1D line.
    pub polluting_loads: u64,

    /// L1D subsystem: L1D plus Pre-cache plus victim cache hits all count.
    pub l1d_accesses: u64,
    pub l1d_hits: u64,
    pub l2_accesses: u64,
    pub l2_hits: u64,
    pub l3_accesses: u64,
    pub l3_hits: u64,
    /// L1I subsystem: iL1 plus instruction Pre-cache.
    pub l1i_accesses: u64,
    pub l1i_hits: u64,

    pub stc_written: u64,
    pub stc_aborted: u64,
    pub stc_noop: u64,

    pub tlb_walks: u64,
    pub max_outstanding_loads: u64,
    pub max_cycles_exceeded: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Stats {
    pub fn ipc(&self) -> f64 {
        ratio(self.committed, self.cycles)
    }

    pub fn l1d_hit_rate(&self) -> f64 {
        ratio(self.l1d_hits, self.l1d_accesses)
    }

    pub fn l2_hit_rate(&self) -> f64 {
        ratio(self.l2_hits, self.l2_accesses)
    }

    pub fn l3_hit_rate(&self) -> f64 {
        ratio(self.l3_hits, self.l3_accesses)
    }

    pub fn l1i_hit_rate(&self) -> f64 {
        ratio(self.l1i_hits, self.l1i_accesses)
    }

    pub fn polluting_loads_pct(&self) -> f64 {
        100.0 * ratio(self.polluting_loads, self.squashed_loads)
    }

    pub fn csv_header() -> &'static str {
        "cycles,committed,ipc,squashes,squashed_loads,squashed_ifetches,polluting_loads,\
         polluting_loads_pct,l1d_hit_rate,l2_hit_rate,l3_hit_rate,l1i_hit_rate,\
         stc_written,stc_aborted,stc_noop,tlb_walks,max_outstanding_loads,max_cycles_exceeded"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{},{},{},{},{:.4},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            self.cycles,
            self.committed,
            self.ipc(),
            self.squashes,
            self.squashed_loads,
            self.squashed_ifetches,
            self.polluting_loads,
            self.polluting_loads_pct(),
            self.l1d_hit_rate(),
            self.l2_hit_rate(),
            self.l3_hit_rate(),
            self.l1i_hit_rate(),
            self.stc_written,
            self.stc_aborted,
            self.stc_noop,
            self.tlb_walks,
            self.max_outstanding_loads,
            self.max_cycles_exceeded as u8,
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_handle_zero_denominators() {
        let s = Stats::default();
        assert_eq!(s.ipc(), 0.0);
        assert_eq!(s.polluting_loads_pct(), 0.0);
    }

    #[test]
    fn csv_has_matching_column_counts() {
        let s = Stats { cycles: 10, committed: 25, ..Stats::default() };
        let csv = s.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap().split(',').count();
        let row = lines.next().unwrap().split(',').count();
        assert_eq!(header, row);
        assert!(csv.contains("2.500000"));
    }
}
