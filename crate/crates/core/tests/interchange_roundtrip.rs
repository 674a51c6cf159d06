mod common;

use common::{gaussian, rng};
use moegeom_core::interchange::{
    captures_from_container, captures_to_container, read_report_file, write_plot_csv, write_report_file, Dtype,
    DumpContainer, DumpHeader, InterchangeError, ReportFile, Tensor,
};
use moegeom_core::matrix::Matrix;
use moegeom_core::pipeline::{
    analyze_layer, stream_jacobians, AnalysisOptions, JacobianWeighting, LayerCapture, Provenance,
};
use proptest::prelude::*;
use rand::Rng;

fn random_capture(layer_id: usize, n: usize, d: usize, e: usize, seed: u64) -> LayerCapture {
    let mut r = rng(seed);
    let hidden = gaussian(n, d, &mut r);
    // top-2 style sparse routing rows
    let routing = Matrix::from_fn(n, e, |_, _| 0.0);
    let mut routing = routing;
    for t in 0..n {
        let a = r.random_range(0..e);
        let b = (a + 1 + r.random_range(0..e - 1)) % e;
        let w: f64 = r.random_range(0.05..0.95);
        routing[(t, a)] = w;
        routing[(t, b)] = 1.0 - w;
    }
    let proj: Vec<Matrix<f64>> = (0..e).map(|_| gaussian(d, d, &mut r)).collect();
    let jacobians = stream_jacobians(&routing, d, d, JacobianWeighting::Routing, |t, k| {
        let s = 1.0 + hidden[(t, 0)].tanh();
        proj[k].scale(s)
    });
    LayerCapture {
        layer_id,
        hidden,
        routing,
        jacobians: Some(jacobians),
        dense: None,
    }
}

fn header() -> DumpHeader {
    let mut h = DumpHeader {
        model: "synthetic".into(),
        creator: "tests".into(),
        ..Default::default()
    };
    h.extra
        .insert("future_field".into(), serde_json::json!({"nested": [1, 2, 3]}));
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tensors_round_trip_bitwise(seed in any::<u64>(), shape in prop::collection::vec(1usize..6, 0..4), f32s in any::<bool>()) {
        let mut r = rng(seed);
        let len: usize = shape.iter().product();
        let mut c = DumpContainer::new(header());
        let special = [0.0, -0.0, f64::MIN_POSITIVE, 1e-310, f64::MAX, -1.5];
        let vals: Vec<f64> = (0..len).map(|i| if i < special.len() { special[i] } else { r.random::<f64>() - 0.5 }).collect();
        let t = if f32s { Tensor::f32(shape.clone(), vals.iter().map(|&v| v as f32).collect()) } else { Tensor::f64(shape.clone(), vals) };
        c.push("a", t.clone());
        c.push("b.nested.name", t);
        let bytes = c.to_bytes().unwrap();
        let back = DumpContainer::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        for ((_, x), (_, y)) in c.sections.iter().zip(&back.sections) {
            let (bx, by): (Vec<u64>, Vec<u64>) = (x.to_f64_vec().iter().map(|v| v.to_bits()).collect(), y.to_f64_vec().iter().map(|v| v.to_bits()).collect());
            prop_assert_eq!(bx, by);
            prop_assert_eq!(&x.shape, &y.shape);
        }
        prop_assert_eq!(back.header, c.header);
    }

    #[test]
    fn truncation_is_always_detected(seed in any::<u64>(), cut in 1usize..200) {
        let cap = random_capture(0, 12, 4, 3, seed);
        let c = captures_to_container(header(), &[cap], Dtype::F64).unwrap();
        let bytes = c.to_bytes().unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(DumpContainer::from_bytes(&bytes[..keep]).is_err());
    }
}

#[test]
fn full_size_dump_round_trips_bit_exactly() {
    let caps: Vec<LayerCapture> = (0..3).map(|l| random_capture(l, 64, 128, 8, 100 + l as u64)).collect();
    let c = captures_to_container(header(), &caps, Dtype::F64).unwrap();
    let bytes = c.to_bytes().unwrap();
    let back = captures_from_container(&DumpContainer::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, caps);
    let idx = c.index().unwrap();
    assert!(idx.iter().all(|e| e.offset % 64 == 0));
    assert_eq!(idx.len(), 3 * 5);
}

#[test]
fn f32_hidden_states_are_promoted_on_load() {
    let cap = random_capture(4, 20, 6, 4, 9);
    let c = captures_to_container(header(), std::slice::from_ref(&cap), Dtype::F32).unwrap();
    let back = captures_from_container(&DumpContainer::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
    let expect = cap.hidden.map(|v| v as f32 as f64);
    assert_eq!(back[0].hidden, expect);
    // Jacobian means and routing stay double precision
    assert_eq!(back[0].routing, cap.routing);
    assert_eq!(back[0].jacobians, cap.jacobians);
}

#[test]
fn layout_is_little_endian_on_any_host() {
    let mut c = DumpContainer::new(DumpHeader::default());
    c.push("x", Tensor::f64(vec![1], vec![1.0]));
    let bytes = c.to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"MGT1");
    assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
    let e = &c.index().unwrap()[0];
    let off = e.offset as usize;
    assert_eq!(&bytes[off..off + 8], &[0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
}

#[test]
fn corrupted_inputs_give_distinct_errors() {
    let cap = random_capture(0, 8, 4, 3, 2);
    let bytes = captures_to_container(header(), &[cap], Dtype::F32)
        .unwrap()
        .to_bytes()
        .unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let err = DumpContainer::from_bytes(&bad).unwrap_err();
    assert!(matches!(err, InterchangeError::BadMagic));
    assert!(err.to_string().contains("not an MGT1 file"));
    assert!(matches!(
        DumpContainer::from_bytes(&bytes[..bytes.len() - 3]),
        Err(InterchangeError::Truncated(_))
    ));
}

fn report_for(seed: u64) -> ReportFile {
    let cap = random_capture(2, 80, 12, 6, seed);
    let opts = AnalysisOptions::default();
    let prov = Provenance {
        source: "synthetic".into(),
        toolkit_version: "test".into(),
        seed: Some(seed),
        config: serde_json::json!({"d": 12}),
    };
    ReportFile::new(vec![analyze_layer(&cap, opts, prov).unwrap()])
}

#[test]
fn report_json_round_trips() {
    let file = report_for(8);
    let text = write_report_file(&file);
    assert!(text.contains("\"schema\": 1"));
    let back = read_report_file(&text).unwrap();
    assert_eq!(back, file);
    assert_eq!(write_report_file(&back), text);
}

#[test]
fn histogram_counts_cover_every_pair() {
    let file = report_for(13);
    let dir = tempfile::tempdir().unwrap();
    let written = write_plot_csv(&file.reports[0], dir.path()).unwrap();
    let e = 6;
    for p in written.iter().filter(|p| p.to_string_lossy().ends_with("_hist.csv")) {
        let text = std::fs::read_to_string(p).unwrap();
        assert!(!text.contains('\r'));
        let total: usize = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, e * (e - 1) / 2, "{}", p.display());
        assert_eq!(text.lines().count(), 21);
    }
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "layer2_jacobian_matrix.csv",
            "layer2_jacobian_hist.csv",
            "layer2_grassmann_matrix.csv",
            "layer2_grassmann_hist.csv",
            "layer2_spectra.csv"
        ]
    );
}
