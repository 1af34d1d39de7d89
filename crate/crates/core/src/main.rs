// Training allocates and frees multi-megabyte activations every step; the
// system allocator hands those back to the OS and page-faults them in again.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(engagement_core::cli::run(std::env::args_os()));
}
