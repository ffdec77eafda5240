use rand::Rng;

use crate::error::Result;
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Var};

/// Learned absolute position table, one row per slot.
#[derive(Clone, Debug)]
pub struct ApeTable {
    pub table: ParamId,
    pub slots: usize,
}

impl ApeTable {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        slots: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add_normal(name, &[slots, dim], std, rng)?;
        Ok(Self { table, slots })
    }

    /// Adds rows `0..n` to `tokens` shaped `[.., n, d]`.
    pub fn add_to(&self, tape: &mut Tape, p: &Bound, tokens: Var) -> Result<Var> {
        let shape = tape.shape(tokens);
        let n = shape[shape.len() - 2];
        let slots: Vec<usize> = (0..n).collect();
        ape_lookup(tape, p[self.table], &slots, tokens)
    }
}

/// `tokens + table[slots]`, where `tokens` is `[.., slots.len(), d]`.
pub fn ape_lookup(tape: &mut Tape, table: Var, slots: &[usize], tokens: Var) -> Result<Var> {
    let rows = tape.index_select(table, slots)?;
    tape.add_broadcast(tokens, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensorcore::Tensor;

    #[test]
    fn zero_table_leaves_tokens_unchanged() {
        let mut t = Tape::new();
        let table = t.param(Tensor::zeros(vec![4, 3]));
        let tokens = Tensor::from_fn(vec![2, 4, 3], |i| i as f64);
        let x = t.constant(tokens.clone());
        let y = ape_lookup(&mut t, table, &[0, 1, 2, 3], x).unwrap();
        assert_eq!(t.value(y), &tokens);
    }

    #[test]
    fn same_slot_adds_same_vector() {
        let mut t = Tape::new();
        let table = t.param(Tensor::from_fn(vec![3, 2], |i| i as f64 + 1.0));
        let x = t.constant(Tensor::zeros(vec![2, 2]));
        let y = ape_lookup(&mut t, table, &[2, 2], x).unwrap();
        let d = t.value(y).data();
        assert_eq!(&d[0..2], &d[2..4]);
        assert_eq!(&d[0..2], &[5.0, 6.0]);
    }

    #[test]
    fn gradient_reaches_only_looked_up_rows() {
        let mut t = Tape::new();
        let table = t.param(Tensor::from_fn(vec![5, 2], |i| i as f64 * 0.1));
        let x = t.constant(Tensor::zeros(vec![2, 2]));
        let y = ape_lookup(&mut t, table, &[3, 1], x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        let g = g.get(table).unwrap();
        assert_eq!(g, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_range_slot_is_rejected() {
        let mut t = Tape::new();
        let table = t.param(Tensor::zeros(vec![2, 2]));
        let x = t.constant(Tensor::zeros(vec![1, 2]));
        assert!(matches!(ape_lookup(&mut t, table, &[2], x), Err(Error::Contract(_))));
    }
}
