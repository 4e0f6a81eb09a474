mod common;

use common::{changed, frames, perturb, tiny};
use vidbuf::model::FusionMode;
use vidbuf::offline::{forward_clipped_mimo, forward_clipped_mimo_metered, forward_full_sequence, ClipConfig};
use vidbuf::stream::{analyze, compile_pipeline, run_stream, FlushMode, StreamState};
use vidbuf::Tensor;

fn assert_bitwise(a: &[Tensor], b: &[Tensor], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.max_abs_diff(y), 0.0, "{what}: frame {i}");
        assert!(x.bitwise_eq(y), "{what}: frame {i} differs in sign of zero");
    }
}

#[test]
fn pipeline_equals_full_sequence() {
    for (base, n) in [(8, 2), (8, 4), (16, 4), (8, 16)] {
        let model = tiny(base, n, FusionMode::Bidirectional, 100 + n as u64);
        for t in [n, n + 1, 3 * n] {
            let xs = frames(t as u64, t, 3, 16, 16);
            let oracle = forward_full_sequence(&model, &xs).unwrap();
            let streamed = run_stream(&model, &xs, FlushMode::ExactEos).unwrap();
            assert_bitwise(&streamed, &oracle, &format!("base {base} N {n} T {t}"));
        }
    }
}

#[test]
fn long_stream_equals_full_sequence() {
    let model = tiny(8, 4, FusionMode::Bidirectional, 5);
    let xs = frames(77, 100, 3, 16, 16);
    let oracle = forward_full_sequence(&model, &xs).unwrap();
    assert_bitwise(&run_stream(&model, &xs, FlushMode::ExactEos).unwrap(), &oracle, "T=100");
}

#[test]
fn first_output_at_step_n_with_matching_index() {
    for n in [1, 2, 4, 16] {
        let model = tiny(8, n, FusionMode::Bidirectional, 1);
        let mut st = StreamState::new(&model, 16, 16, FlushMode::ExactEos).unwrap();
        assert_eq!(st.graph().buffer_blocks(), n);
        for (i, x) in frames(2, n + 3, 3, 16, 16).into_iter().enumerate() {
            let y = st.step(Some(x)).unwrap();
            if i < n {
                assert!(y.is_none(), "N={n}: output at warm-up step {i}");
            } else {
                assert_eq!(y.unwrap().index, (i - n) as i64);
            }
        }
        let tail: Vec<i64> = st.flush().unwrap().iter().map(|m| m.index).collect();
        assert_eq!(tail, (3..n as i64 + 3).collect::<Vec<_>>());
    }
}

#[test]
fn bidirectional_receptive_field_is_2n_plus_1() {
    for n in [1, 2, 4] {
        let model = tiny(8, n, FusionMode::Bidirectional, 21);
        let t = 4 * n + 3;
        let xs = frames(3, t, 3, 16, 16);
        let base = run_stream(&model, &xs, FlushMode::ExactEos).unwrap();
        for j in [0, t / 2, t - 1] {
            let got = changed(&base, &run_stream(&model, &perturb(&xs, j), FlushMode::ExactEos).unwrap());
            let want: Vec<usize> = (0..t).filter(|&i| i.abs_diff(j) <= n).collect();
            assert_eq!(got, want, "N={n}, perturbed frame {j}");
        }
    }
}

#[test]
fn unidirectional_is_causal_with_n_plus_1_history() {
    for n in [1, 2, 4] {
        let model = tiny(8, n, FusionMode::Unidirectional, 22);
        let t = 3 * n + 3;
        let xs = frames(4, t, 3, 16, 16);
        let base = run_stream(&model, &xs, FlushMode::ExactEos).unwrap();
        assert_bitwise(&base, &forward_full_sequence(&model, &xs).unwrap(), "uni offline");
        for j in [0, n, t - 1] {
            let got = changed(&base, &run_stream(&model, &perturb(&xs, j), FlushMode::ExactEos).unwrap());
            let want: Vec<usize> = (j..t).filter(|&i| i - j <= n).collect();
            assert_eq!(got, want, "N={n}, perturbed frame {j}");
        }
    }
}

#[test]
fn framewise_without_fusion() {
    let model = tiny(8, 4, FusionMode::None, 23);
    let xs = frames(5, 6, 3, 16, 16);
    let base = run_stream(&model, &xs, FlushMode::ExactEos).unwrap();
    assert_eq!(changed(&base, &run_stream(&model, &perturb(&xs, 2), FlushMode::ExactEos).unwrap()), vec![2]);
    let g = compile_pipeline(model.net()).unwrap();
    assert_eq!((g.buffer_blocks(), g.fifos().count()), (0, 0));
}

#[test]
fn state_bytes_do_not_grow_with_stream_length() {
    let model = tiny(8, 4, FusionMode::Bidirectional, 24);
    let predicted = analyze(&compile_pipeline(model.net()).unwrap(), 16, 16).unwrap().state_bytes;
    for t in [8, 20, 40] {
        let mut st = StreamState::new(&model, 16, 16, FlushMode::ExactEos).unwrap();
        for (i, x) in frames(t as u64, t, 3, 16, 16).into_iter().enumerate() {
            st.step(Some(x)).unwrap();
            if i >= 4 {
                assert_eq!(st.state_bytes(), predicted, "T={t} step {i}");
            }
        }
    }
}

#[test]
fn paper_flush_differs_only_in_last_n_frames() {
    let model = tiny(8, 4, FusionMode::Bidirectional, 25);
    let xs = frames(6, 12, 3, 16, 16);
    let exact = run_stream(&model, &xs, FlushMode::ExactEos).unwrap();
    let paper = run_stream(&model, &xs, FlushMode::PaperZeroFrames).unwrap();
    assert_eq!(changed(&exact, &paper), (8..12).collect::<Vec<_>>());
}

#[test]
fn clip_edges_degrade_only_near_interior_boundaries() {
    let n = 4;
    let model = tiny(8, n, FusionMode::Bidirectional, 26);
    let t = 32;
    let xs = frames(7, t, 3, 16, 16);
    let full = forward_full_sequence(&model, &xs).unwrap();
    let clipped = forward_clipped_mimo(&model, &xs, ClipConfig::new(8).unwrap()).unwrap();
    let near_edge = |i: usize| (1..t / 8).any(|k| {
        let b = 8 * k; // first frame of clip k
        (i < b && b - i <= n) || (i >= b && i - b < n)
    });
    let got = changed(&full, &clipped);
    let want: Vec<usize> = (0..t).filter(|&i| near_edge(i)).collect();
    assert_eq!(got, want);
    let whole = forward_clipped_mimo(&model, &xs, ClipConfig::new(t).unwrap()).unwrap();
    assert!(changed(&full, &whole).is_empty());
}

#[test]
fn mimo_activation_bytes_scale_with_clip_length() {
    let model = tiny(8, 4, FusionMode::Bidirectional, 27);
    let xs = frames(8, 32, 3, 16, 16);
    let bytes = |tc| forward_clipped_mimo_metered(&model, &xs, ClipConfig::new(tc).unwrap()).unwrap().1.peak_bytes;
    let (b8, b16) = (bytes(8), bytes(16));
    assert_eq!(b16, 2 * b8);
}
