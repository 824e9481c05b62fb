fn main() {
    std::process::exit(wassreg::run(std::env::args_os()));
}
