//! Simulator configuration: a flat `key = value` text format with strict
//! parsing (unknown or duplicate keys are errors) and a renderer that
//! round-trips, used for run checkpoints.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Precache,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Precache => "precache",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelParams {
    pub size_bytes: u32,
    pub ways: u32,
    pub latency: u64,
    pub ports: u32,
}

impl LevelParams {
    pub fn sets(&self, line_size: u32) -> u32 {
        self.size_bytes / (self.ways * line_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub mode: Mode,
    pub cores: u32,
    pub seed: u64,
    pub max_cycles: u64,
    pub line_size: u32,
    pub l1: LevelParams,
    pub l2: LevelParams,
    pub l3: LevelParams,
    pub mem_latency: u64,

    pub rob_entries: u32,
    pub fetch_queue_entries: u32,
    pub load_queue_entries: u32,
    pub store_queue_entries: u32,
    pub fetch_width: u32,
    pub issue_width: u32,
    pub commit_width: u32,
    pub exception_delay_cycles: u64,

    pub iprecache_entries: u32,
    pub paging: bool,
    pub tlb_entries: u32,
    pub pretlb_entries: u32,
    pub tlb_walk_latency: u64,

    pub victim_cache: bool,
    pub victim_cache_blocks: u32,

    /// Test hook: commit-time cache writes flip one data byte, so the
    /// divergence detectors can be shown to actually fire.
    pub corrupt_stc: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Precache,
            cores: 1,
            seed: 0,
            max_cycles: 2_000_000,
            line_size: 64,
            l1: LevelParams { size_bytes: 32 << 10, ways: 4, latency: 4, ports: 2 },
            l2: LevelParams { size_bytes: 2 << 20, ways: 8, latency: 10, ports: 4 },
            l3: LevelParams { size_bytes: 8 << 20, ways: 16, latency: 40, ports: 8 },
            mem_latency: 200,
            rob_entries: 128,
            fetch_queue_entries: 128,
            load_queue_entries: 32,
            store_queue_entries: 32,
            fetch_width: 4,
            issue_width: 4,
            commit_width: 4,
            exception_delay_cycles: 50,
            iprecache_entries: 28,
            paging: false,
            tlb_entries: 64,
            pretlb_entries: 32,
            tlb_walk_latency: 30,
            victim_cache: false,
            victim_cache_blocks: 32,
            corrupt_stc: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

macro_rules! set_fields {
    ($cfg:ident, $key:ident, $val:ident, $lineno:ident; $($name:literal => $slot:expr, $parse:ident;)*) => {
        match $key {
            $($name => $slot = $parse($val, $lineno)?,)*
            other => {
                return Err(ConfigError::Parse {
                    line: $lineno,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    };
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SimConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, val)) = line.split_once('=') else {
                return Err(ConfigError::Parse { line: lineno, msg: "expected `key = value`".into() });
            };
            let (key, val) = (key.trim(), val.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Parse { line: lineno, msg: format!("duplicate key `{key}`") });
            }
            cfg.set(key, val, lineno)?;
        }
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, val: &str, lineno: usize) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(v: &str, line: usize) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::Parse { line, msg: format!("bad number `{v}`") })
        }
        fn flag(v: &str, line: usize) -> Result<bool, ConfigError> {
            match v {
                "0" | "false" => Ok(false),
                "1" | "true" => Ok(true),
                _ => Err(ConfigError::Parse { line, msg: format!("bad flag `{v}`") }),
            }
        }
        fn mode(v: &str, line: usize) -> Result<Mode, ConfigError> {
            match v {
                "baseline" => Ok(Mode::Baseline),
                "precache" => Ok(Mode::Precache),
                _ => Err(ConfigError::Parse { line, msg: format!("bad mode `{v}`") }),
            }
        }
        set_fields!(self, key, val, lineno;
            "mode" => self.mode, mode;
            "cores" => self.cores, num;
            "seed" => self.seed, num;
            "max_cycles" => self.max_cycles, num;
            "line_size" => self.line_size, num;
            "l1_size_bytes" => self.l1.size_bytes, num;
            "l1_ways" => self.l1.ways, num;
            "l1_latency" => self.l1.latency, num;
            "l1_ports" => self.l1.ports, num;
            "l2_size_bytes" => self.l2.size_bytes, num;
            "l2_ways" => self.l2.ways, num;
            "l2_latency" => self.l2.latency, num;
            "l2_ports" => self.l2.ports, num;
            "l3_size_bytes" => self.l3.size_bytes, num;
            "l3_ways" => self.l3.ways, num;
            "l3_latency" => self.l3.latency, num;
            "l3_ports" => self.l3.ports, num;
            "mem_latency" => self.mem_latency, num;
            "rob_entries" => self.rob_entries, num;
            "fetch_queue_entries" => self.fetch_queue_entries, num;
            "load_queue_entries" => self.load_queue_entries, num;
            "store_queue_entries" => self.store_queue_entries, num;
            "fetch_width" => self.fetch_width, num;
            "issue_width" => self.issue_width, num;
            "commit_width" => self.commit_width, num;
            "exception_delay_cycles" => self.exception_delay_cycles, num;
            "iprecache_entries" => self.iprecache_entries, num;
            "paging" => self.paging, flag;
            "tlb_entries" => self.tlb_entries, num;
            "pretlb_entries" => self.pretlb_entries, num;
            "tlb_walk_latency" => self.tlb_walk_latency, num;
            "victim_cache" => self.victim_cache, flag;
            "victim_cache_blocks" => self.victim_cache_blocks, num;
            "corrupt_stc" => self.corrupt_stc, flag;
        );
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if ![1, 2, 4].contains(&self.cores) {
            return Err(format!("cores must be 1, 2 or 4, got {}", self.cores));
        }
        if !self.line_size.is_power_of_two() || self.line_size < 8 {
            return Err("line_size must be a power of two >= 8".into());
        }
        for (name, lv) in [("l1", &self.l1), ("l2", &self.l2), ("l3", &self.l3)] {
            if lv.ways == 0 || lv.ports == 0 || lv.latency == 0 {
                return Err(format!("{name}: ways, ports and latency must be nonzero"));
            }
            if lv.size_bytes == 0 || lv.size_bytes % (lv.ways * self.line_size) != 0 {
                return Err(format!("{name}: size must be a multiple of ways * line_size"));
            }
            if !lv.sets(self.line_size).is_power_of_two() {
                return Err(format!("{name}: set count must be a power of two"));
            }
        }
        if self.rob_entries == 0
            || self.fetch_queue_entries == 0
            || self.load_queue_entries == 0
            || self.store_queue_entries == 0
        {
            return Err("queue sizes must be nonzero".into());
        }
        if self.fetch_width == 0 || self.issue_width == 0 || self.commit_width == 0 {
            return Err("widths must be nonzero".into());
        }
        if self.iprecache_entries == 0 {
            return Err("iprecache_entries must be nonzero".into());
        }
        if self.max_cycles == 0 {
            return Err("max_cycles must be nonzero".into());
        }
        if self.victim_cache {
            if self.mode != Mode::Baseline {
                return Err("victim_cache is a baseline-only variant".into());
            }
            if self.victim_cache_blocks == 0 {
                return Err("victim_cache_blocks must be nonzero".into());
            }
        }
        if self.paging && (self.tlb_entries == 0 || self.pretlb_entries == 0) {
            return Err("tlb sizes must be nonzero with paging on".into());
        }
        Ok(())
    }

    /// Capacity of the per-core data Pre-cache; tied to the load queue so a
    /// quarantined entry always exists for every in-flight load.
    pub fn precache_entries(&self) -> u32 {
        self.load_queue_entries
    }

    pub fn block_of(&self, addr: u32) -> u32 {
        addr & !(self.line_size - 1)
    }

    /// Full key set in parse order; output reparses to an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("mode", self.mode.to_string());
        kv("cores", self.cores.to_string());
        kv("seed", self.seed.to_string());
        kv("max_cycles", self.max_cycles.to_string());
        kv("line_size", self.line_size.to_string());
        for (name, lv) in [("l1", &self.l1), ("l2", &self.l2), ("l3", &self.l3)] {
            kv(&format!("{name}_size_bytes"), lv.size_bytes.to_string());
            kv(&format!("{name}_ways"), lv.ways.to_string());
            kv(&format!("{name}_latency"), lv.latency.to_string());
            kv(&format!("{name}_ports"), lv.ports.to_string());
        }
        kv("mem_latency", self.mem_latency.to_string());
        kv("rob_entries", self.rob_entries.to_string());
        kv("fetch_queue_entries", self.fetch_queue_entries.to_string());
        kv("load_queue_entries", self.load_queue_entries.to_string());
        kv("store_queue_entries", self.store_queue_entries.to_string());
        kv("fetch_width", self.fetch_width.to_string());
        kv("issue_width", self.issue_width.to_string());
        kv("commit_width", self.commit_width.to_string());
        kv("exception_delay_cycles", self.exception_delay_cycles.to_string());
        kv("iprecache_entries", self.iprecache_entries.to_string());
        kv("paging", (self.paging as u8).to_string());
        kv("tlb_entries", self.tlb_entries.to_string());
        kv("pretlb_entries", self.pretlb_entries.to_string());
        kv("tlb_walk_latency", self.tlb_walk_latency.to_string());
        kv("victim_cache", (self.victim_cache as u8).to_string());
        kv("victim_cache_blocks", self.victim_cache_blocks.to_string());
        kv("corrupt_stc", (self.corrupt_stc as u8).to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(SimConfig::parse(&cfg.render()).unwrap(), cfg);
        assert_eq!(cfg.l1.sets(cfg.line_size), 128);
        assert_eq!(cfg.l2.sets(cfg.line_size), 4096);
        assert_eq!(cfg.l3.sets(cfg.line_size), 8192);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = SimConfig::parse(
            "# two-core baseline\n\
             mode = baseline\n\
             cores = 2\n\
             l1_size_bytes = 1024\n\
             l1_ways = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Baseline);
        assert_eq!(cfg.cores, 2);
        assert_eq!(cfg.l1.sets(64), 8);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(matches!(
            SimConfig::parse("l4_size = 3\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(SimConfig::parse("cores = 2\ncores = 4\n").is_err());
        assert!(SimConfig::parse("cores = 3\n").is_err());
        assert!(SimConfig::parse("mode = precache\nvictim_cache = 1\n").is_err());
        assert!(SimConfig::parse("l1_size_bytes = 1000\n").is_err());
    }
}
