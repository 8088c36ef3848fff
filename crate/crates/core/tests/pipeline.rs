use hgmf_core::embed::LookupEmbedder;
use hgmf_core::synthetic::{
    catalog_with_sizes, echo_client, planted_cases, planted_catalog, PlantedSpec,
};
use hgmf_core::{
    prune, select, select_with_embedding, Catalog, Catalog32, PruneConfig, ToolCatalog,
};

#[test]
fn f32_and_f64_pipelines_agree_on_planted_cases() {
    let spec = PlantedSpec::default();
    let p64 = planted_catalog::<f64>(&spec);
    let p32 = planted_catalog::<f32>(&spec);
    let cases64 = planted_cases(&p64.catalog, 20, 0.05, 8);
    let cases32 = planted_cases(&p32.catalog, 20, 0.05, 8);
    let c64 = echo_client(&p64.catalog, &cases64);
    let c32 = echo_client(&p32.catalog, &cases32);
    let e64 = LookupEmbedder::from_catalog(&p64.catalog);
    let e32 = LookupEmbedder::from_catalog(&p32.catalog);
    let cfg = PruneConfig::default();
    for (a, b) in cases64.iter().zip(&cases32) {
        let s64 = select_with_embedding(&a.query, &a.query_embedding, &p64.catalog, &cfg, &c64, &e64)
            .unwrap();
        let s32 = select_with_embedding(&b.query, &b.query_embedding, &p32.catalog, &cfg, &c32, &e32)
            .unwrap();
        assert_eq!(s64.best.tool_id, a.truth_tool_id);
        assert_eq!(s32.best.tool_id, b.truth_tool_id);
        assert!(!s64.used_fallback() && !s32.used_fallback());
    }
}

#[test]
fn select_embeds_query_text() {
    let p = planted_catalog::<f64>(&PlantedSpec {
        servers: 4,
        tools_per_server: 6,
        dimension: 16,
        ..PlantedSpec::default()
    });
    let cases = planted_cases(&p.catalog, 3, 0.05, 1);
    let client = echo_client(&p.catalog, &cases);
    let mut embedder = LookupEmbedder::from_catalog(&p.catalog);
    for c in &cases {
        embedder.insert(c.query.clone(), c.query_embedding.to_f64());
    }
    for c in &cases {
        let s = select(&c.query, &p.catalog, &PruneConfig::default(), &client, &embedder).unwrap();
        assert_eq!(
            (s.best.server_id.as_str(), s.best.tool_id.as_str()),
            (c.truth_server_id.as_str(), c.truth_tool_id.as_str())
        );
    }
}

#[test]
fn catalog_file_round_trip_with_cap() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.json");
    let big: Catalog = catalog_with_sizes(&[15, 3, 12], 8, 4);
    big.save(&path).unwrap();

    let loaded = Catalog32::load(&path).unwrap();
    assert!(!loaded.is_normalized());
    assert_eq!(loaded.n_tools(), 30);
    let capped = loaded.index_tools(10).unwrap().normalize().unwrap();
    assert_eq!(capped.n_tools(), 23);
    let kept: Vec<&str> = capped.tools_of("srv000").map(|t| t.tool_id.as_str()).collect();
    assert_eq!(kept.first(), Some(&"srv000.tool000"));
    assert_eq!(kept.last(), Some(&"srv000.tool009"));

    let q = capped.tools()[5].embedding.as_slice().to_vec();
    let set = prune(&capped, &q, &PruneConfig::default()).unwrap();
    assert!(!set.is_empty());
    let reloaded: ToolCatalog<f64> = ToolCatalog::from_json_str(&big.to_json_string()).unwrap();
    assert_eq!(reloaded.n_tools(), 30);
}
