use std::collections::BTreeMap;

use geomm_core::raster::{crop, filter, merge, scale, tile, FilterKind, ScaleMethod};
use geomm_core::vocab::{DETECTION_CLASSES, SEGMENTATION_CLASSES};
use geomm_core::{
    extract_answer, rank_candidates, AnswerStatus, Detections, EmbeddingVector, Mask, OptionLetter, Options,
    OrientedBox, Raster, Rect,
};
use proptest::prelude::*;

fn options_strategy() -> impl Strategy<Value = Options> {
    prop::collection::vec(".{0,12}", 2..=8).prop_map(|texts| {
        texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| (OptionLetter::from_index(i).unwrap(), t))
            .collect::<BTreeMap<_, _>>()
    })
}

/// Raw model outputs: arbitrary text mixed with answer-like fragments.
fn raw_strategy() -> impl Strategy<Value = String> {
    let fragment = prop_oneof![
        ".{0,20}",
        "[A-Ha-h]",
        Just("Answer: ".to_string()),
        Just("The answer is ".to_string()),
        Just("(".to_string()),
        Just(")".to_string()),
        Just("\n".to_string()),
        Just("①".to_string()),
    ];
    prop::collection::vec(fragment, 0..8).prop_map(|parts| parts.concat())
}

fn raster_strategy(max: u32) -> impl Strategy<Value = Raster> {
    (1..=max, 1..=max, 1u8..=4).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(any::<u8>(), (w * h * c as u32) as usize)
            .prop_map(move |px| Raster::new(w, h, c, px).unwrap())
    })
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4i8..=4, dim)
        .prop_filter("nonzero", |v| v.iter().any(|x| *x != 0))
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

/// Query, candidates and `k`.
type RankingCase = (Vec<f64>, Vec<(String, Vec<f64>)>, usize);

fn ranking_case() -> impl Strategy<Value = RankingCase> {
    (1usize..=16, 1usize..=20).prop_flat_map(|(dim, n)| {
        (vector(dim), prop::collection::vec(vector(dim), n), 0..=n + 1).prop_map(|(q, vs, k)| {
            let cands = vs.into_iter().enumerate().map(|(i, v)| (format!("d{i:02}"), v)).collect();
            (q, cands, k)
        })
    })
}

fn embed(cands: &[(String, Vec<f64>)]) -> Vec<(String, EmbeddingVector)> {
    cands.iter().map(|(id, v)| (id.clone(), EmbeddingVector::new(v.clone()).unwrap())).collect()
}

fn boxes_strategy() -> impl Strategy<Value = Detections> {
    prop::collection::vec((0..DETECTION_CLASSES.len(), 0.0f64..=1.0), 0..40).prop_map(|v| Detections {
        boxes: v
            .into_iter()
            .map(|(c, confidence)| OrientedBox {
                class: DETECTION_CLASSES[c].to_string(),
                confidence,
                corners: [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            })
            .collect(),
    })
}

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1u32..=30, 1u32..=30).prop_flat_map(|(w, h)| {
        prop::collection::vec(0u8..SEGMENTATION_CLASSES.len() as u8, (w * h) as usize).prop_map(move |labels| Mask {
            width: w,
            height: h,
            class_names: SEGMENTATION_CLASSES.iter().map(|s| s.to_string()).collect(),
            labels,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn extraction_is_total_and_stays_within_the_options(raw in raw_strategy(), options in options_strategy()) {
        let got = extract_answer(&raw, &options);
        prop_assert_eq!(&got.raw, &raw);
        match got.status {
            AnswerStatus::Letter(l) => {
                prop_assert!(options.contains_key(&l));
                prop_assert!(got.rule_fired.is_some());
            }
            AnswerStatus::Invalid => prop_assert!(got.rule_fired.is_none()),
        }
        prop_assert_eq!(extract_answer(&raw, &options), got);
    }

    #[test]
    fn ranking_is_a_sorted_prefix_of_the_candidates((q, cands, k) in ranking_case()) {
        let ranked = rank_candidates(&EmbeddingVector::new(q).unwrap(), &embed(&cands), k).unwrap();
        prop_assert_eq!(ranked.len(), k.min(cands.len()));
        let mut ids: Vec<&str> = ranked.iter().map(|r| r.id.as_str()).collect();
        for w in ranked.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
        for r in &ranked {
            prop_assert!((-1.0..=1.0).contains(&r.score));
        }
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), ranked.len());
    }

    #[test]
    fn ranking_ignores_input_order((q, cands, k) in ranking_case(), rotate in 0usize..20) {
        let query = EmbeddingVector::new(q).unwrap();
        let mut shuffled = cands.clone();
        shuffled.reverse();
        let len = shuffled.len();
        shuffled.rotate_left(rotate % len);
        prop_assert_eq!(
            rank_candidates(&query, &embed(&cands), k).unwrap(),
            rank_candidates(&query, &embed(&shuffled), k).unwrap()
        );
    }

    #[test]
    fn ranking_ignores_power_of_two_scaling((q, cands, k) in ranking_case(), exp in -8i32..=8) {
        let factor = 2f64.powi(exp);
        let scaled_q: Vec<f64> = q.iter().map(|x| x * factor).collect();
        let scaled: Vec<(String, Vec<f64>)> =
            cands.iter().map(|(id, v)| (id.clone(), v.iter().map(|x| x * factor).collect())).collect();
        prop_assert_eq!(
            rank_candidates(&EmbeddingVector::new(q).unwrap(), &embed(&cands), k).unwrap(),
            rank_candidates(&EmbeddingVector::new(scaled_q).unwrap(), &embed(&scaled), k).unwrap()
        );
    }

    #[test]
    fn class_areas_add_up_to_the_image(mask in mask_strategy(), gsd in 0.05f64..20.0) {
        let total: f64 = SEGMENTATION_CLASSES.iter().map(|c| mask.area(c, Some(gsd)).unwrap()).sum();
        let expected = f64::from(mask.width * mask.height) * gsd * gsd;
        prop_assert!((total - expected).abs() <= 1e-9 * expected);
        let pixels: usize = (0..SEGMENTATION_CLASSES.len()).map(|i| mask.pixel_count(i)).sum();
        prop_assert_eq!(pixels, mask.labels.len());
    }

    #[test]
    fn per_class_counts_sum_to_the_total(d in boxes_strategy()) {
        let by_class: usize = DETECTION_CLASSES.iter().map(|c| d.count(Some(c)).unwrap()).sum();
        prop_assert_eq!(by_class, d.count(None).unwrap());
    }

    #[test]
    fn tiling_with_overlap_round_trips(
        (img, t, stride) in raster_strategy(40).prop_flat_map(|img| {
            let longest = img.width().max(img.height());
            (Just(img), 1..=longest).prop_flat_map(|(img, t)| (Just(img), Just(t), 1..=t))
        }),
    ) {
        let ts = tile(&img, t, stride).unwrap();
        let (rows, cols) = ts.grid();
        prop_assert_eq!(ts.tiles.len(), (rows * cols) as usize);
        prop_assert_eq!(merge(&ts).unwrap(), img);
    }

    #[test]
    fn crop_commutes_with_integer_nearest_upscaling(
        img in raster_strategy(24),
        k in 1u32..=4,
        corner in (0.0f64..1.0, 0.0f64..1.0),
        extent in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let (w, h) = (img.width(), img.height());
        let x = (corner.0 * f64::from(w)) as u32;
        let y = (corner.1 * f64::from(h)) as u32;
        let cw = 1 + (extent.0 * f64::from(w - x)) as u32 % (w - x);
        let ch = 1 + (extent.1 * f64::from(h - y)) as u32 % (h - y);
        let rect = Rect { x, y, width: cw, height: ch };
        let a = scale(&crop(&img, rect).unwrap(), cw * k, ch * k, ScaleMethod::Nearest).unwrap();
        let big = scale(&img, w * k, h * k, ScaleMethod::Nearest).unwrap();
        let b = crop(&big, Rect { x: x * k, y: y * k, width: cw * k, height: ch * k }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn filters_keep_shape_and_fix_constant_images(img in raster_strategy(20), v in any::<u8>()) {
        let flat = Raster::filled(img.width(), img.height(), img.channels(), v).unwrap();
        for kind in [FilterKind::Box3, FilterKind::Median3, FilterKind::Sharpen3] {
            let out = filter(&img, kind);
            prop_assert_eq!((out.width(), out.height(), out.channels()), (img.width(), img.height(), img.channels()));
            prop_assert_eq!(filter(&flat, kind), flat.clone());
        }
        let (lo, hi) = (img.pixels().iter().min().unwrap(), img.pixels().iter().max().unwrap());
        for kind in [FilterKind::Box3, FilterKind::Median3] {
            prop_assert!(filter(&img, kind).pixels().iter().all(|p| lo <= p && p <= hi));
        }
    }
}
