use proptest::prelude::*;
use spid_chain::ledger::{
    aggregate_flows, apply_flows, balances, net_balances, update_cumulative, validate_block,
    CumulativeState, FlowAggregates, TransactionMatrix,
};
use spid_chain::Matrix;

type Tx = (usize, usize, usize, usize, i64);

const M: usize = 4;
const CHAINS: usize = 3;

fn transfer() -> impl Strategy<Value = Tx> {
    (0..CHAINS, 1..CHAINS, 0..M, 0..M, 0i64..500)
        .prop_map(|(s, off, from, to, amount)| (s, (s + off) % CHAINS, from, to, amount))
}

fn matrices(
    txs: &[Tx],
    source: Option<usize>,
    dest: Option<usize>,
    epoch: u64,
) -> Vec<TransactionMatrix<i64>> {
    let mut out: Vec<TransactionMatrix<i64>> = Vec::new();
    for &(s, d, from, to, amount) in txs {
        if source.is_some_and(|c| c != s) || dest.is_some_and(|c| c != d) {
            continue;
        }
        let idx = match out
            .iter()
            .position(|x| x.source_chain == s && x.dest_chain == d)
        {
            Some(i) => i,
            None => {
                out.push(TransactionMatrix::new(s, d, epoch, M));
                out.len() - 1
            }
        };
        out[idx].transfer(from, to, amount).unwrap();
    }
    out
}

fn dense(entries: &[(usize, usize, i64)]) -> Matrix<i64> {
    let mut m = Matrix::zeros(M, M);
    for &(r, c, v) in entries {
        m.set(r, c, m.get(r, c) + v);
    }
    m
}

fn flows() -> impl Strategy<Value = Vec<(usize, usize, i64)>> {
    prop::collection::vec((0..M, 0..M, 0i64..100), 0..6)
}

proptest! {
    /// The recursion keeps inflow and confirmed outflow as running sums and
    /// charges only the latest proposal.
    #[test]
    fn recursion_matches_direct_sums(
        epochs in prop::collection::vec((flows(), flows(), flows()), 1..12),
    ) {
        let mut state = CumulativeState::new(vec![0i64; M]);
        let mut sum_in = Matrix::zeros(M, M);
        let mut sum_confirmed = Matrix::zeros(M, M);
        for (e, (a, b, c)) in epochs.iter().enumerate() {
            let f = FlowAggregates {
                inflow: dense(a),
                outflow_confirmed: dense(b),
                outflow_proposed: dense(c),
                epoch: e as u64 + 1,
            };
            state = update_cumulative(&state, &f).unwrap();
            sum_in.add_assign(&dense(a)).unwrap();
            sum_confirmed.add_assign(&dense(b)).unwrap();
            let expected_out = sum_confirmed.add(&dense(c)).unwrap();
            prop_assert_eq!(&state.w_in, &sum_in);
            prop_assert_eq!(&state.w_out, &expected_out);
            prop_assert_eq!(&state.confirmed_outflow(), &sum_confirmed);
        }
    }

    #[test]
    fn zero_flows_are_neutral(a in flows(), b in flows()) {
        let mut state = CumulativeState::new(vec![10i64; M]);
        let first = FlowAggregates { inflow: dense(&a), outflow_confirmed: dense(&b), outflow_proposed: Matrix::zeros(M, M), epoch: 1 };
        apply_flows(&mut state, &first).unwrap();
        let before = state.clone();
        apply_flows(&mut state, &FlowAggregates::zeros(M, 2)).unwrap();
        prop_assert_eq!(state.w_in, before.w_in);
        prop_assert_eq!(state.w_out, before.w_out);
        prop_assert_eq!(state.epoch, 2);
    }

    /// Every transfer leaves one chain and enters another, so network-wide
    /// balances stay at their genesis total.
    #[test]
    fn confirmed_transfers_conserve_tokens(
        genesis in prop::collection::vec(0i64..10_000, M),
        epochs in prop::collection::vec(prop::collection::vec(transfer(), 0..10), 1..8),
    ) {
        let mut states: Vec<CumulativeState<i64>> = (0..CHAINS).map(|_| CumulativeState::new(genesis.clone())).collect();
        for (e, txs) in epochs.iter().enumerate() {
            let epoch = e as u64 + 1;
            for (j, st) in states.iter_mut().enumerate() {
                let f = aggregate_flows(j, M, epoch, &matrices(txs, None, Some(j), epoch), &matrices(txs, Some(j), None, epoch), &[]).unwrap();
                apply_flows(st, &f).unwrap();
            }
        }
        let total: i64 = states.iter().flat_map(net_balances).sum();
        prop_assert_eq!(total, CHAINS as i64 * genesis.iter().sum::<i64>());
    }

    /// Validation only ever removes whole accounts, and what it keeps is affordable.
    #[test]
    fn validated_block_is_affordable_subset(
        genesis in prop::collection::vec(0i64..1_000, M),
        txs in prop::collection::vec(transfer(), 0..12),
        spent in flows(),
    ) {
        let txs: Vec<Tx> = txs.into_iter().map(|t| (0, if t.1 == 0 { 1 } else { t.1 }, t.2, t.3, t.4)).collect();
        let proposed = matrices(&txs, Some(0), None, 1);
        let mut state = CumulativeState::new(genesis.clone());
        let f = FlowAggregates { inflow: Matrix::zeros(M, M), outflow_confirmed: dense(&spent), outflow_proposed: Matrix::zeros(M, M), epoch: 1 };
        apply_flows(&mut state, &f).unwrap();
        let kept = validate_block(&proposed, &state).unwrap();
        prop_assert_eq!(kept.len(), proposed.len());
        let settled = state.settled_balances();
        let mut spend = [0i64; M];
        for (k, p) in kept.iter().zip(&proposed) {
            for (r, c, v) in k.amounts.iter() {
                prop_assert_eq!(p.amounts.get(r, c), v);
                spend[r] += v;
            }
        }
        for r in 0..M {
            let wanted: i64 = proposed.iter().map(|p| p.amounts.row_sum(r)).sum();
            if spend[r] > 0 {
                prop_assert!(settled[r] - spend[r] >= 0);
                prop_assert_eq!(spend[r], wanted);
            } else if wanted > 0 {
                prop_assert!(settled[r] - wanted < 0);
            }
        }
        prop_assert_eq!(validate_block(&kept, &state).unwrap(), kept);
    }
}

#[test]
fn balances_combine_genesis_inflow_and_outflow() {
    let w_in = Matrix::from_rows(vec![vec![0, 5], vec![7, 0]]);
    let w_out = Matrix::from_rows(vec![vec![1, 2], vec![0, 4]]);
    assert_eq!(balances(&[100i64, 50], &w_in, &w_out), vec![104, 51]);
}
