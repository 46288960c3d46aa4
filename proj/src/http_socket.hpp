#pragma once

#include <sys/socket.h>

#include <httplib.h>

namespace specforge::detail {

// httplib enables SO_REUSEPORT by default, which lets a second server bind a
// port that is already serving. Plain SO_REUSEADDR keeps restarts fast while
// still reporting a taken port.
inline void configure_server(httplib::Server& svr) {
    svr.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    svr.set_tcp_nodelay(true);
}

} // namespace specforge::detail
