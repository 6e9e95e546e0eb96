// Runs the lighter examples so they stay in sync with the library.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example!(graph_model);
example!(features);
example!(gen_data);
example!(verify);
example!(param_count);
example!(decode);
example!(attn_dump);
example!(cli);
