namespace funnelcert {}
