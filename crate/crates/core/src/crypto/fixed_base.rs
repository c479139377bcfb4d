//! Fixed-base exponentiation with precomputed window tables.
//!
//! Long-lived bases (the generator, escrow keys, member keys) are raised to
//! many different exponents. After a base has been seen `BUILD_AFTER` times
//! a table of `base^(d·2^(w·i))` is built, and each later exponentiation is a
//! product of one table entry per window.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::One;

const WINDOW: u64 = 6;
const BUILD_AFTER: u32 = 16;
const CAPACITY: usize = 1024;

pub(crate) struct Table {
    rows: Vec<Vec<BigUint>>,
}

impl Table {
    pub(crate) fn new(base: &BigUint, modulus: &BigUint, exponent_bits: u64) -> Self {
        let width = 1usize << WINDOW;
        let mut rows = Vec::with_capacity(exponent_bits.div_ceil(WINDOW) as usize);
        let mut cur = base % modulus;
        for _ in 0..exponent_bits.div_ceil(WINDOW) {
            let mut row = Vec::with_capacity(width - 1);
            row.push(cur.clone());
            for d in 1..width - 1 {
                row.push((&row[d - 1] * &cur) % modulus);
            }
            cur = (&row[width - 2] * &cur) % modulus;
            rows.push(row);
        }
        Table { rows }
    }

    /// `None` when the exponent is wider than the table.
    pub(crate) fn pow(&self, e: &BigUint, modulus: &BigUint) -> Option<BigUint> {
        if e.bits() > self.rows.len() as u64 * WINDOW {
            return None;
        }
        let mut acc = BigUint::one();
        for (i, row) in self.rows.iter().enumerate() {
            let mut d = 0usize;
            for b in 0..WINDOW {
                if e.bit(i as u64 * WINDOW + b) {
                    d |= 1 << b;
                }
            }
            if d != 0 {
                acc = (acc * &row[d - 1]) % modulus;
            }
        }
        Some(acc)
    }
}

enum Slot {
    Uses(u32),
    Ready(Arc<Table>),
}

type Cache = HashMap<BigUint, HashMap<BigUint, Slot>>;

fn cache() -> &'static Mutex<Cache> {
    static CACHE: OnceLock<Mutex<Cache>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn lookup(base: &BigUint, modulus: &BigUint, exponent_bits: u64) -> Option<Arc<Table>> {
    {
        let mut guard = cache().lock().expect("cache lock");
        let slots = guard.entry(modulus.clone()).or_default();
        match slots.get_mut(base) {
            Some(Slot::Ready(t)) => return Some(t.clone()),
            Some(Slot::Uses(n)) if *n + 1 < BUILD_AFTER => {
                *n += 1;
                return None;
            }
            Some(Slot::Uses(_)) => {}
            None => {
                if slots.len() >= CAPACITY {
                    slots.clear();
                }
                slots.insert(base.clone(), Slot::Uses(1));
                return None;
            }
        }
    }
    let table = Arc::new(Table::new(base, modulus, exponent_bits));
    let mut guard = cache().lock().expect("cache lock");
    guard
        .entry(modulus.clone())
        .or_default()
        .insert(base.clone(), Slot::Ready(table.clone()));
    Some(table)
}

/// `base^e mod modulus` for exponents below `2^exponent_bits`.
pub(crate) fn pow(base: &BigUint, e: &BigUint, modulus: &BigUint, exponent_bits: u64) -> BigUint {
    lookup(base, modulus, exponent_bits)
        .and_then(|t| t.pow(e, modulus))
        .unwrap_or_else(|| base.modpow(e, modulus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn table_matches_modpow(base in 2u64..u64::MAX, e in any::<u64>(), m in 3u64..u64::MAX) {
            let (base, e, m) = (BigUint::from(base), BigUint::from(e), BigUint::from(m | 1));
            let t = Table::new(&base, &m, 64);
            prop_assert_eq!(t.pow(&e, &m).unwrap(), base.modpow(&e, &m));
        }
    }

    #[test]
    fn wide_exponent_falls_back() {
        let m = BigUint::from(1_000_003u32);
        let t = Table::new(&BigUint::from(5u32), &m, 12);
        assert!(t.pow(&BigUint::from(1u64 << 20), &m).is_none());
        assert!(t.pow(&BigUint::from(4095u32), &m).is_some());
    }

    #[test]
    fn cached_pow_agrees_before_and_after_build() {
        let m = BigUint::from(2_147_483_647u64);
        let base = BigUint::from(48_271u32);
        for k in 0..(BUILD_AFTER as u64 + 5) {
            let e = BigUint::from(k * 7919 + 3);
            assert_eq!(pow(&base, &e, &m, 32), base.modpow(&e, &m));
        }
    }
}
