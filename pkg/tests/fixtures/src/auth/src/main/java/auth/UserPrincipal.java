package auth;

import java.security.Principal;

/**
 * A principal identified by a user id.
 */
public class UserPrincipal implements Principal {

    private final String id;

    public UserPrincipal(String id) {
        this.id = id;
    }

    @Override
    public String getName() {
        return id;
    }

    @Override
    public boolean equals(Object other) {
        if (!(other instanceof UserPrincipal)) {
            return false;
        }
        return id.equals(((UserPrincipal) other).id);
    }

    @Override
    public int hashCode() {
        return id.hashCode();
    }
}
