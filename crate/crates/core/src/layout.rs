//! Memory map of the modeled MCU.
//!
//! Read from a TOML file of `key = value` pairs:
//!
//! ```toml
//! er_min = 0xE000
//! er_max = 0xFFFF
//! or_min = 0x0400
//! or_max = 0x07FE
//! stack_init = 0x0A00
//! peripherals = [[0x0010, 0x00FF]]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLayout {
    pub er_min: u16,
    pub er_max: u16,
    /// Lowest log slot.
    pub or_min: u16,
    /// Highest log slot; also holds the saved stack base.
    pub or_max: u16,
    pub stack_init: u16,
    /// Inclusive address ranges.
    #[serde(default)]
    pub peripherals: Vec<[u16; 2]>,
}

impl MemoryLayout {
    pub fn from_toml(text: &str) -> Result<MemoryLayout, ConfigError> {
        let layout: MemoryLayout = toml::from_str(text).map_err(|e| ConfigError::Layout(e.message().to_string()))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn to_toml(&self) -> String {
        let mut s = format!(
            "er_min = 0x{:04X}\ner_max = 0x{:04X}\nor_min = 0x{:04X}\nor_max = 0x{:04X}\nstack_init = 0x{:04X}\n",
            self.er_min, self.er_max, self.or_min, self.or_max, self.stack_init
        );
        let ranges: Vec<String> = self.peripherals.iter().map(|[a, b]| format!("[0x{a:04X}, 0x{b:04X}]")).collect();
        s.push_str(&format!("peripherals = [{}]\n", ranges.join(", ")));
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError::Layout(m.to_string()));
        if !self.er_min.is_multiple_of(2)
            || !self.or_min.is_multiple_of(2)
            || !self.or_max.is_multiple_of(2)
            || !self.stack_init.is_multiple_of(2)
        {
            return err("region bounds and stack_init must be word aligned");
        }
        if self.er_min > self.er_max {
            return err("er_min must not exceed er_max");
        }
        if self.or_min >= self.or_max {
            return err("or_min must be below or_max");
        }
        let or_hi = self.or_max + 1;
        let mut ranges = vec![("ER", self.er_min, self.er_max), ("OR", self.or_min, or_hi)];
        for [a, b] in &self.peripherals {
            if a > b {
                return err("empty peripheral range");
            }
            ranges.push(("peripheral", *a, *b));
        }
        for (i, (na, a0, a1)) in ranges.iter().enumerate() {
            for (nb, b0, b1) in &ranges[i + 1..] {
                if a0 <= b1 && b0 <= a1 {
                    return Err(ConfigError::Layout(format!("{na} and {nb} ranges overlap")));
                }
            }
            if (*a0..=*a1).contains(&self.stack_init) {
                return Err(ConfigError::Layout(format!("stack_init lies inside {na}")));
            }
        }
        Ok(())
    }

    pub fn in_er(&self, addr: u16) -> bool {
        (self.er_min..=self.er_max).contains(&addr)
    }

    /// OR covers the bytes of every slot, `[or_min, or_max + 1]`.
    pub fn in_or(&self, addr: u16) -> bool {
        (self.or_min..=self.or_max.saturating_add(1)).contains(&addr)
    }

    pub fn in_peripheral(&self, addr: u16) -> bool {
        self.peripherals.iter().any(|[a, b]| (*a..=*b).contains(&addr))
    }

    pub fn or_len(&self) -> usize {
        (self.or_max - self.or_min) as usize + 2
    }

    /// Word capacity of the log below the saved-stack-base slot.
    pub fn log_capacity(&self) -> usize {
        ((self.or_max - self.or_min) / 2) as usize
    }

    pub fn er_len(&self) -> usize {
        (self.er_max - self.er_min) as usize + 1
    }
}
