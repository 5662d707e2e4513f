use malle_core::metrics::CountingAlloc;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn main() {
    std::process::exit(malle_cli::run(std::env::args_os()));
}
