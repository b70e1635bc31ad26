// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::layoutgen::probes::probe_layouts;

fn lithonet() -> (Generator, ParamStore<f32>) {
    let g = Generator::new(GeneratorConfig::lithonet(1)).unwrap();
    let p = ParamStore::init(g.specs(), &mut ChaCha8Rng::seed_from_u64(1));
    (g, p)
}

fn probe() -> Raster {
    probe_layouts()[0].raster.to_raster()
}

#[test]
fn litho_shapes_bound_and_determinism() {
    let (g, mut p) = lithonet();
    let s = probe();
    let y = FabParam::scalar(0.3).unwrap();
    let m = litho_generator_forward(&g, &p, &s, &y).unwrap();
    assert_eq!(m.dims(), (64, 64));
    // zero-initialized head: identity warp
    assert_eq!(m.max_magnitude(), 0.0);
    // a large head saturates the tanh but never exceeds the bound
    let head = p.id("head.bias").unwrap();
    p.get_mut(head).copy_from_slice(&[50.0, -50.0]);
    let m = litho_generator_forward(&g, &p, &s, &y).unwrap();
    assert!(m.dx().iter().chain(m.dy()).all(|v| v.abs() <= 8.0));
    let again = litho_generator_forward(&g, &p, &s, &y).unwrap();
    assert_eq!(m, again);
}

#[test]
fn shape_invariance_at_other_sizes() {
    let (g, p) = lithonet();
    let y = FabParam::scalar(0.0).unwrap();
    for (w, h) in [(32, 48), (16, 16)] {
        let s = Raster::zeros(w, h);
        assert_eq!(litho_generator_forward(&g, &p, &s, &y).unwrap().dims(), (w, h));
    }
    assert!(litho_generator_forward(&g, &p, &Raster::zeros(24, 24), &y).is_err());
    let y2 = FabParam::new(vec![0.0, 0.1]).unwrap();
    assert!(litho_generator_forward(&g, &p, &probe(), &y2).is_err());
}

#[test]
fn mask_in_unit_interval() {
    let k = Generator::new(GeneratorConfig::opcnet()).unwrap();
    let mut p: ParamStore<f32> = ParamStore::init(k.specs(), &mut ChaCha8Rng::seed_from_u64(2));
    let s = probe();
    let mask = opc_generator_forward(&k, &p, &s).unwrap();
    assert_eq!(mask.dims(), s.dims());
    assert!(mask.pixels().iter().all(|v| *v == 0.5));
    let w = p.id("head.weight").unwrap();
    p.get_mut(w).iter_mut().for_each(|v| *v = 3.0);
    let mask = opc_generator_forward(&k, &p, &s).unwrap();
    assert!(mask.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(mask, opc_generator_forward(&k, &p, &s).unwrap());
    // the mask is a valid generator input
    let (g, pg) = lithonet();
    let m = litho_generator_forward(&g, &pg, &mask, &FabParam::scalar(0.0).unwrap()).unwrap();
    assert_eq!(m.dims(), s.dims());
}

#[test]
fn regressor_shape_and_zero_head() {
    let d = Regressor::new(RegressorConfig::new(1)).unwrap();
    let p: ParamStore<f32> = ParamStore::init(d.specs(), &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(regressor_forward(&d, &p, &Raster::zeros(64, 64)).unwrap(), vec![0.0]);
    let est = regressor_forward(&d, &p, &probe()).unwrap();
    assert_eq!(est.len(), 1);
    assert_eq!(est, regressor_forward(&d, &p, &probe()).unwrap());
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let opts = GradcheckOptions::default();
    let inst = gradcheck::build_instance(&opts);
    let n = opts.size;
    let (out, cache) = inst.g.forward(&inst.pg, &inst.layout, n, n, &inst.param);
    let mut grads = inst.pg.zeros_like();
    let gin = inst
        .g
        .backward(&inst.pg, &cache, &Tensor::zeros(out.c, out.h, out.w), Some(&mut grads));
    assert!(gin.iter().all(|v| *v == 0.0));
    assert!(grads.arrays().all(|(_, v)| v.iter().all(|x| *x == 0.0)));
    let (_, cache) = inst.d.forward(&inst.pd, &inst.layout, n, n);
    let mut grads = inst.pd.zeros_like();
    inst.d.backward(&inst.pd, &cache, &[0.0], Some(&mut grads));
    assert!(grads.arrays().all(|(_, v)| v.iter().all(|x| *x == 0.0)));
}

#[test]
fn gradcheck_passes_and_covers_every_array() {
    let opts = GradcheckOptions::default();
    let report = gradcheck(&opts);
    assert!(report.passed(), "{report}");
    let inst = gradcheck::build_instance(&opts);
    let expected: Vec<String> = [("G", &inst.pg), ("D", &inst.pd), ("K", &inst.pk)]
        .iter()
        .flat_map(|(pre, p)| p.arrays().map(move |(n, _)| format!("{pre}/{n}")))
        .collect();
    let names: Vec<String> = report.arrays.iter().map(|a| a.name.clone()).collect();
    assert_eq!(names, expected);
    assert_eq!(names.iter().collect::<HashSet<_>>().len(), names.len());
    for a in &report.arrays {
        assert_eq!(a.checked + a.nonsmooth, a.size.min(opts.per_array), "{}", a.name);
        assert!(a.nonsmooth == 0, "{}", a.name);
    }
}

#[test]
fn corrupted_gradient_is_named() {
    let opts = GradcheckOptions {
        corrupt: Some("G/enc0.conv2.weight".into()),
        ..Default::default()
    };
    let report = gradcheck(&opts);
    let failed: Vec<&str> = report.failures().map(|a| a.name.as_str()).collect();
    assert_eq!(failed, ["G/enc0.conv2.weight"]);
    assert!(report.to_string().contains("FAIL") && report.to_string().contains("G/enc0.conv2.weight"));
}
